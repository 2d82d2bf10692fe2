"""Command line: ``l1bsde run <manifest>``, ``l1bsde verify <suite>``, ``l1bsde catalog [filter]``."""

from __future__ import annotations

import argparse
import sys

from . import suites
from .generators.catalog import catalog, describe
from .manifest import ManifestError, load
from .runner import ENV_OUT_DIR, Progress, execute

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l1bsde", description="Lattice and Monte Carlo BSDE experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default: ${ENV_OUT_DIR} or ./l1bsde_out)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batteries")
    common.add_argument("--beta", type=float, help="override the norm exponent in (0, 1)")
    common.add_argument("--tol", type=float, help="override the fixed-point tolerance")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one manifest")
    r.add_argument("manifest")
    r.add_argument("--quiet", action="store_true", help="no progress lines on stderr")
    v = sub.add_parser("verify", parents=[common], help="run an acceptance suite")
    v.add_argument("suite")
    v.add_argument("--only", help="comma separated criterion names (substrings) or numbers")
    c = sub.add_parser("catalog", help="list generator catalog entries")
    c.add_argument("filter", nargs="?", default="")
    return p


def cmd_run(args) -> int:
    try:
        m = load(args.manifest)
    except ManifestError as exc:
        print(f"error: {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rec = execute(m, out_dir=args.out_dir, threads=args.threads, beta=args.beta, tol=args.tol,
                  progress=Progress(enabled=not args.quiet))
    for k, v in rec.scalars.items():
        print(f"{k:>24} = {v}")
    for a in rec.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'} {a.quantity} {a.op} {a.expected} (measured {a.measured})"
              + (f" {a.note}" if a.note else ""))
    for e in rec.errors:
        print(f"error: {e}", file=sys.stderr)
    print(f"digest {rec.digest}\noutputs {rec.out_dir}")
    return rec.exit_code


def cmd_verify(args) -> int:
    try:
        crits = suites.select(args.suite, args.only)
    except suites.UnknownSuiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not crits:
        print(f"no criteria in suite {args.suite!r} match {args.only!r}", file=sys.stderr)
        return EXIT_USAGE
    ctx = {"threads": args.threads}
    results = []
    for c in crits:
        r = suites.run_criterion(c, ctx)
        print(r.line(), flush=True)
        results.append(r)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return EXIT_OK if not failed else EXIT_FAILED


def cmd_catalog(args) -> int:
    rows = [describe(g) for g in catalog(args.filter)]
    if not rows:
        print(f"no catalog entries match {args.filter!r}")
        return EXIT_OK
    width = max(len(r["id"]) for r in rows)
    cw = max(len(",".join(r["classes"])) for r in rows)
    print(f"{'id':<{width}}  {'classes':<{cw}}  parameters")
    for r in rows:
        params = ", ".join(f"{k}={v}" for k, v in r["parameters"].items())
        print(f"{r['id']:<{width}}  {','.join(r['classes']):<{cw}}  {params}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "verify":
        return cmd_verify(args)
    return cmd_catalog(args)


if __name__ == "__main__":
    sys.exit(main())
