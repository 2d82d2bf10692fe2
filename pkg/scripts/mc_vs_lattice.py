"""Least-squares Monte Carlo against the lattice for g = 1 - y^3, xi = B_T^2.

    python3 scripts/mc_vs_lattice.py --paths 10000 100000 --steps 64 --seed 2024
"""

import argparse
import time

from l1bsde.bsde import RegressionConfig, solve_bsde, solve_bsde_mc
from l1bsde.lattice import TimeGrid, build_lattice, sample_paths
from l1bsde.suites import cubic_driver


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, nargs="+", default=[10_000, 100_000])
    ap.add_argument("--steps", type=int, default=64)
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    grid = TimeGrid(1.0, args.steps)
    xi = lambda t, x: x[..., 0] ** 2  # noqa: E731
    g = cubic_driver()
    ref = solve_bsde(build_lattice(grid, 1), xi, g).y0
    print(f"lattice Y0 = {ref:.6f}")
    print(f"{'M':>8} {'Y0':>10} {'se':>10} {'gap':>10} {'cond_max':>10} {'seconds':>8}")
    for M in args.paths:
        t0 = time.perf_counter()
        sol = solve_bsde_mc(sample_paths(grid, 1, M, seed=args.seed), xi, g,
                            regression=RegressionConfig(degree=args.degree, seed=args.seed))
        dt = time.perf_counter() - t0
        print(f"{M:>8} {sol.y0:>10.6f} {sol.std_error:>10.2e} {abs(sol.y0 - ref):>10.2e} "
              f"{float(sol.condition_numbers.max()):>10.3g} {dt:>8.2f}")


if __name__ == "__main__":
    main()
