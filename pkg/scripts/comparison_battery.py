"""Randomised comparison battery; prints a verdict summary and any failing cases.

    python3 scripts/comparison_battery.py --cases 200 --seed 0 --threads 4
"""

import argparse
from collections import Counter

from l1bsde.analysis import comparison_battery, random_comparison_cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--osgood-share", type=float, default=0.1)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    cases = random_comparison_cases(args.cases, seed=args.seed, osgood_share=args.osgood_share)
    by_id = {c.case_id: c for c in cases}
    rep = comparison_battery(cases, threads=args.threads)
    tally = Counter((by_id[r.case_id].solver, "osgood" if by_id[r.case_id].osgood else "lipschitz", r.verdict)
                    for r in rep.results)
    for (solver, family, verdict), n in sorted(tally.items()):
        print(f"{solver:<12} {family:<10} {verdict:<13} {n}")
    worst = max(rep.results, key=lambda r: r.y_margin)
    print(f"largest ordering margin {worst.y_margin:.3e} ({worst.case_id})")
    for r in rep.failures:
        print(f"FAIL {r.case_id} at {r.node}: reverified={r.reverify()}")
    return 1 if rep.failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
