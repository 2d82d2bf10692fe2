"""Lower penalization ladder on the B_T^2 / L = 1/2 instance across grid sizes.

For g = 0 the implicit penalised step has the closed form
``Y = (E + n dt L) / (1 + n dt)`` wherever ``E < L``, so the worst node gap
is predicted by the largest ``L - E`` on the grid.  The table prints the
measured gap next to that prediction.

    python3 scripts/penalization_study.py --steps 16 32 64 --max-n 16384
"""

import argparse

import numpy as np

from l1bsde.generators import zero_generator
from l1bsde.lattice import conditional_expectation
from l1bsde.reflected import penalization_ladder_lower
from l1bsde.suites import snell_instance


def worst_shortfall(lat, ref, L):
    return max(float(np.max(L[k] - conditional_expectation(lat, ref.Y, k))) for k in range(lat.n_steps))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--max-n", type=int, default=16384)
    args = ap.parse_args()
    schedule = tuple(4**i for i in range(20) if 4**i <= args.max_n)
    print(f"{'N':>4} {'n':>7} {'y_sup':>11} {'predicted':>11} {'k_sup':>11}")
    for N in args.steps:
        lat, xi, L = snell_instance(N)
        lad = penalization_ladder_lower(lat, xi, zero_generator(), L=L, schedule=schedule)
        short = worst_shortfall(lat, lad.reference, L)
        for e in lad.entries:
            pred = short / (1 + e.n * lat.dt)
            print(f"{N:>4} {e.n:>7} {e.gaps['y_sup']:>11.4e} {pred:>11.4e} {e.gaps['k_sup']:>11.4e}")
        need = int(np.ceil((short / 1e-2 - 1) / lat.dt))
        print(f"{N:>4} smallest n with y_sup <= 1e-2: {need}")


if __name__ == "__main__":
    main()
