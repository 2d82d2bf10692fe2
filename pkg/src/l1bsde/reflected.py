"""Reflected and doubly reflected BSDEs: direct schemes, penalization ladders, DP oracles.

Direct scheme: at each node solve the unconstrained implicit step for
``y_hat`` and project, ``Y = min(max(y_hat, L), U)``, recording
``dK = (L - y_hat)^+`` and ``dA = (y_hat - U)^+``.  At most one of the two is
positive, and each is positive only where ``Y`` sits on its barrier, so the
Skorokhod and orthogonality conditions hold node by node.

Penalization ladders solve plain (or one-sided reflected) BSDEs whose
driver carries ``n (y - L)^-`` and/or ``-n (y - U)^+``; the penalty terms,
times ``dt``, are the increments of ``K^n`` and ``A^n``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import norms
from .bsde import Numerics, StepDiagnostics, as_forcing, backward_sweep, terminal_layer
from .generators.spec import GeneratorSpec, penalize_double, penalize_lower, penalize_upper
from .lattice import BrownianLattice, LatticeError, NodeProcess

VARIANTS = ("via_upper_rbsde", "via_lower_rbsde", "via_bsde")


def barrier(lattice: BrownianLattice, spec, side: str) -> NodeProcess:
    """Node process for a barrier given as ``None``/``"none"``, a number, ``fn(t, x)`` or a node process."""
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    if spec is None or (isinstance(spec, str) and spec.lower() == "none"):
        return NodeProcess.minus_infinity(lattice) if side == "lower" else NodeProcess.plus_infinity(lattice)
    if isinstance(spec, NodeProcess):
        return spec
    if callable(spec):
        return NodeProcess.from_function(lattice, spec, name=side)
    return NodeProcess.constant(lattice, float(spec), name=side)


@dataclass(frozen=True, eq=False)
class BarrierPair:
    L: NodeProcess
    U: NodeProcess

    def __post_init__(self):
        if self.L.is_sentinel and self.L.sentinel != -1:
            raise LatticeError("lower barrier sentinel must be -inf")
        if self.U.is_sentinel and self.U.sentinel != 1:
            raise LatticeError("upper barrier sentinel must be +inf")
        if not (self.L.is_sentinel or self.U.is_sentinel):
            for k in range(min(len(self.L), len(self.U))):
                bad = self.L[k] > self.U[k]
                if np.any(bad):
                    node = tuple(int(i) for i in np.argwhere(bad)[0])
                    raise LatticeError(f"L > U at step {k}, node {node}")

    @classmethod
    def build(cls, lattice: BrownianLattice, L=None, U=None) -> "BarrierPair":
        return cls(barrier(lattice, L, "lower"), barrier(lattice, U, "upper"))

    def check_terminal(self, xi_layer: np.ndarray) -> None:
        N = self.L.lattice.n_steps
        if not self.L.is_sentinel and np.any(xi_layer < self.L[N]):
            raise LatticeError("terminal value lies below the lower barrier")
        if not self.U.is_sentinel and np.any(xi_layer > self.U[N]):
            raise LatticeError("terminal value lies above the upper barrier")


@dataclass(eq=False)
class SolutionQuadruple:
    """``(Y, Z, K, A)`` on the lattice; ``K`` and ``A`` are stored as node increments.

    ``K`` is path dependent on a recombining tree, so only its increments are
    node quantities; path functionals go through :mod:`l1bsde.norms`.
    """

    lattice: BrownianLattice
    Y: NodeProcess
    Z: NodeProcess
    G: NodeProcess
    dK: NodeProcess
    dA: NodeProcess
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    @property
    def y0(self) -> float:
        return float(np.ravel(self.Y[0])[0])

    @property
    def expected_K_T(self) -> float:
        return norms.expected_total(self.lattice, self.dK)

    @property
    def expected_A_T(self) -> float:
        return norms.expected_total(self.lattice, self.dA)

    @property
    def max_residual(self) -> float:
        return max((d.max_residual for d in self.diagnostics), default=0.0)


def _quadruple(lattice, Y, Z, G, dK, dA, diags) -> SolutionQuadruple:
    return SolutionQuadruple(lattice, NodeProcess(lattice, tuple(Y), name="Y"),
                             NodeProcess(lattice, tuple(Z), name="Z"), NodeProcess(lattice, tuple(G), name="G"),
                             NodeProcess(lattice, tuple(dK), name="dK"), NodeProcess(lattice, tuple(dA), name="dA"),
                             diags)


def solve_drbsde(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, barriers: BarrierPair | None = None,
                 numerics: Numerics | None = None) -> SolutionQuadruple:
    """Direct projection scheme for DRBSDE(xi, g + dV, L, U)."""
    barriers = barriers or BarrierPair.build(lattice)
    barriers.check_terminal(terminal_layer(lattice, xi))
    return _quadruple(lattice, *backward_sweep(lattice, xi, g, V, numerics, L=barriers.L, U=barriers.U))


def solve_rbsde_lower(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, L=None,
                      numerics: Numerics | None = None) -> SolutionQuadruple:
    return solve_drbsde(lattice, xi, g, V, BarrierPair.build(lattice, L=L), numerics)


def solve_rbsde_upper(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, U=None,
                      numerics: Numerics | None = None) -> SolutionQuadruple:
    return solve_drbsde(lattice, xi, g, V, BarrierPair.build(lattice, U=U), numerics)


# oracles ----------------------------------------------------------------------------
# Written without the solver primitives: children are enumerated explicitly.

def _child_mean(nxt: np.ndarray, k: int, d: int) -> np.ndarray:
    acc = np.zeros((k + 1,) * d)
    for moves in itertools.product((0, 1), repeat=d):
        acc += nxt[tuple(slice(m, m + k + 1) for m in moves)]
    return acc / 2**d


def _finite_or(b: NodeProcess, k: int, fill: float) -> np.ndarray | float:
    return fill if b.is_sentinel else b[k]


def snell_oracle(lattice: BrownianLattice, xi, L) -> NodeProcess:
    """``Y_N = xi``, ``Y_k = max(L_k, E[Y_{k+1}])``."""
    Lp = barrier(lattice, L, "lower")
    N, d = lattice.n_steps, lattice.dim
    Y = [None] * (N + 1)
    Y[N] = terminal_layer(lattice, xi)
    for k in range(N - 1, -1, -1):
        Y[k] = np.maximum(_finite_or(Lp, k, -np.inf), _child_mean(Y[k + 1], k, d))
    return NodeProcess(lattice, tuple(Y), name="snell")


def dynkin_oracle(lattice: BrownianLattice, xi, L, U) -> NodeProcess:
    """``Y_N = xi``, ``Y_k = min(max(E[Y_{k+1}], L_k), U_k)``."""
    Lp, Up = barrier(lattice, L, "lower"), barrier(lattice, U, "upper")
    N, d = lattice.n_steps, lattice.dim
    Y = [None] * (N + 1)
    Y[N] = terminal_layer(lattice, xi)
    for k in range(N - 1, -1, -1):
        Y[k] = np.minimum(np.maximum(_child_mean(Y[k + 1], k, d), _finite_or(Lp, k, -np.inf)),
                          _finite_or(Up, k, np.inf))
    return NodeProcess(lattice, tuple(Y), name="dynkin")


def flat_off_report(q: SolutionQuadruple, barriers: BarrierPair) -> dict:
    """``kl = E[sum (Y-L) dK]``, ``ua = E[sum (U-Y) dA]`` and the count of nodes with both increments positive."""
    lat = q.lattice
    kl = ua = 0.0
    ortho = 0
    for k in range(lat.n_steps):
        if not barriers.L.is_sentinel:
            kl += lat.expectation((q.Y[k] - barriers.L[k]) * q.dK[k], k)
        if not barriers.U.is_sentinel:
            ua += lat.expectation((barriers.U[k] - q.Y[k]) * q.dA[k], k)
        ortho += int(np.sum(np.minimum(q.dK[k], q.dA[k]) > 0))
    return {"kl": float(kl), "ua": float(ua), "ortho_violations": ortho}


# penalization ladders -------------------------------------------------------------------

@dataclass(eq=False)
class LadderEntry:
    n: float
    solution: SolutionQuadruple
    gaps: dict
    monotone_violations: int = 0
    sandwich_violations: int = 0


@dataclass(eq=False)
class PenalizationLadder:
    variant: str
    schedule: tuple
    entries: list[LadderEntry]
    reference: SolutionQuadruple
    beta: float

    @property
    def limit(self) -> SolutionQuadruple:
        return self.entries[-1].solution

    @property
    def monotone_violations(self) -> int:
        return sum(e.monotone_violations for e in self.entries)

    @property
    def sandwich_violations(self) -> int:
        return sum(e.sandwich_violations for e in self.entries)

    def gap_series(self, key: str) -> list[float]:
        return [e.gaps[key] for e in self.entries]

    def tail_nonincreasing(self, key: str = "y_sup", count: int = 3, tol: float = 1e-12) -> bool:
        s = self.gap_series(key)[-count:]
        return all(b <= a + tol for a, b in zip(s, s[1:]))

    def table(self) -> list[dict]:
        return [{"n": e.n, "Y0": e.solution.y0, "K_T_mean": e.solution.expected_K_T,
                 "A_T_mean": e.solution.expected_A_T, **e.gaps,
                 "monotone_violations": e.monotone_violations,
                 "sandwich_violations": e.sandwich_violations} for e in self.entries]


def gap_norms(a: SolutionQuadruple, b: SolutionQuadruple, beta: float) -> dict:
    lat = a.lattice
    dY = [x - y for x, y in zip(a.Y.values, b.Y.values)]
    dZ = [x - y for x, y in zip(a.Z.values, b.Z.values)]
    dK = [x - y for x, y in zip(a.dK.values, b.dK.values)]
    dA = [x - y for x, y in zip(a.dA.values, b.dA.values)]
    return {
        "y_sup": norms.node_sup(dY),
        "y_s_beta": norms.s_beta(lat, dY, beta),
        "z_m_beta": norms.m_beta(lat, dZ, beta),
        "k_sup": norms.sup_cumulative(lat, dK),
        "k_s_beta": norms.s_beta_cumulative(lat, dK, beta),
        "a_sup": norms.sup_cumulative(lat, dA),
        "a_s_beta": norms.s_beta_cumulative(lat, dA, beta),
    }


def _count_order(lo: NodeProcess, hi: NodeProcess, tol: float) -> int:
    """Nodes where ``lo > hi`` beyond a relative tolerance."""
    bad = 0
    for a, b in zip(lo.values, hi.values):
        bad += int(np.sum(a - b > tol * np.maximum(1.0, np.abs(b))))
    return bad


def _penalized_entry(lattice, xi, g, V, barriers: BarrierPair, n, variant, numerics):
    L, U = barriers.L, barriers.U
    dt = lattice.dt
    if variant == "lower":
        gn, hard_L, hard_U = penalize_lower(g, L, n), None, None
    elif variant == "upper":
        gn, hard_L, hard_U = penalize_upper(g, U, n), None, None
    elif variant == "via_upper_rbsde":
        gn, hard_L, hard_U = penalize_lower(g, L, n), None, U
    elif variant == "via_lower_rbsde":
        gn, hard_L, hard_U = penalize_upper(g, U, n), L, None
    elif variant == "via_bsde":
        gn, hard_L, hard_U = penalize_double(g, L, U, n), None, None
    else:
        raise ValueError(f"unknown ladder variant {variant!r}; known: lower, upper, {', '.join(VARIANTS)}")
    Y, Z, G, dK, dA, diags = backward_sweep(lattice, xi, gn, V, numerics, L=hard_L, U=hard_U)
    N = lattice.n_steps
    if hard_L is None and not L.is_sentinel and variant != "upper":
        dK = [n * np.maximum(L[k] - Y[k], 0.0) * dt for k in range(N)]
    if hard_U is None and not U.is_sentinel and variant != "lower":
        dA = [n * np.maximum(Y[k] - U[k], 0.0) * dt for k in range(N)]
    # the driver actually used excludes the penalty, which now lives in dK / dA
    G = [G[k] - (dK[k] if hard_L is None else 0.0) / dt + (dA[k] if hard_U is None else 0.0) / dt
         for k in range(N)]
    return _quadruple(lattice, Y, Z, G, dK, dA, diags)


def _run_ladder(lattice, xi, g, V, barriers, schedule, variant, numerics, beta, direction, monotone_tol,
                strict, reference=None):
    from .bsde import MonotonicityError

    schedule = tuple(schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be nonempty and strictly increasing")
    if any(n < 0 for n in schedule):
        raise ValueError("penalty levels must be nonnegative")
    numerics = numerics or Numerics()
    V = as_forcing(lattice, V)
    barriers.check_terminal(terminal_layer(lattice, xi))
    ref = reference or solve_drbsde(lattice, xi, g, V, barriers, numerics)
    entries: list[LadderEntry] = []
    for n in schedule:
        q = _penalized_entry(lattice, xi, g, V, barriers, n, variant, numerics)
        viol = 0
        if entries and direction:
            prev = entries[-1].solution.Y
            viol = _count_order(prev, q.Y, monotone_tol) if direction > 0 else _count_order(q.Y, prev, monotone_tol)
            if viol and strict:
                raise MonotonicityError(f"{variant} ladder lost monotonicity at n={n} ({viol} nodes)", -1, None,
                                        norms.node_sup_diff(prev, q.Y))
        entries.append(LadderEntry(n, q, gap_norms(q, ref, beta), viol))
    return PenalizationLadder(variant, schedule, entries, ref, beta)


def penalization_ladder_lower(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, L=None,
                              schedule: Sequence[float] = (1, 4, 16, 64, 256, 1024),
                              numerics: Numerics | None = None, beta: float = 0.5,
                              monotone_tol: float = 1e-10, strict: bool = False) -> PenalizationLadder:
    """BSDEs with driver ``g + n (y - L)^-``; ``Y^n`` nondecreasing in ``n``."""
    return _run_ladder(lattice, xi, g, V, BarrierPair.build(lattice, L=L), schedule, "lower", numerics, beta,
                       +1, monotone_tol, strict)


def penalization_ladder_upper(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, U=None,
                              schedule: Sequence[float] = (1, 4, 16, 64, 256, 1024),
                              numerics: Numerics | None = None, beta: float = 0.5,
                              monotone_tol: float = 1e-10, strict: bool = False) -> PenalizationLadder:
    """BSDEs with driver ``g - n (y - U)^+``; ``Y^n`` nonincreasing in ``n``."""
    return _run_ladder(lattice, xi, g, V, BarrierPair.build(lattice, U=U), schedule, "upper", numerics, beta,
                       -1, monotone_tol, strict)


def penalization_ladder_mixed(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, L=None, U=None,
                              schedule: Sequence[float] = (1, 4, 16, 64, 256, 1024),
                              variant: str = "via_bsde", numerics: Numerics | None = None,
                              beta: float = 0.5, monotone_tol: float = 1e-10,
                              strict: bool = False) -> PenalizationLadder:
    """Two-barrier ladders.

    ``via_upper_rbsde``: hard ``U``, penalised ``L`` (nondecreasing in n);
    ``via_lower_rbsde``: hard ``L``, penalised ``U`` (nonincreasing);
    ``via_bsde``: both penalised, and every entry is checked against the
    other two ladders at the same ``n`` for ``Y_lower <= Y <= Y_upper``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown ladder variant {variant!r}; known: {', '.join(VARIANTS)}")
    barriers = BarrierPair.build(lattice, L=L, U=U)
    if variant == "via_bsde":
        ladder = _run_ladder(lattice, xi, g, V, barriers, schedule, variant, numerics, beta, 0,
                             monotone_tol, strict)
        for e in ladder.entries:
            lo = _penalized_entry(lattice, xi, g, as_forcing(lattice, V), barriers, e.n, "via_upper_rbsde",
                                  numerics or Numerics())
            hi = _penalized_entry(lattice, xi, g, as_forcing(lattice, V), barriers, e.n, "via_lower_rbsde",
                                  numerics or Numerics())
            e.sandwich_violations = (_count_order(lo.Y, e.solution.Y, monotone_tol)
                                     + _count_order(e.solution.Y, hi.Y, monotone_tol))
        return ladder
    direction = +1 if variant == "via_upper_rbsde" else -1
    return _run_ladder(lattice, xi, g, V, barriers, schedule, variant, numerics, beta, direction,
                       monotone_tol, strict)


def penalization_ladder_double(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, L=None, U=None,
                               schedule: Sequence[float] = (1, 4, 16, 64, 256, 1024),
                               numerics: Numerics | None = None, beta: float = 0.5,
                               monotone_tol: float = 1e-10, strict: bool = False) -> PenalizationLadder:
    """Both barriers penalised in a plain BSDE (``g + n(y-L)^- - n(y-U)^+``)."""
    return penalization_ladder_mixed(lattice, xi, g, V, L, U, schedule, "via_bsde", numerics, beta,
                                     monotone_tol, strict)


def mirror_generator(g: GeneratorSpec) -> GeneratorSpec:
    """``g~(t, x, y, z) = -g(t, x, -y, -z)``, the driver of ``-Y``."""
    return g.with_(func=lambda t, x, y, z: -g.func(t, x, -np.asarray(y), -np.asarray(z)), name=f"mirror[{g.name}]")


def max_violation(q: SolutionQuadruple, barriers: BarrierPair) -> float:
    """Largest amount by which ``Y`` leaves ``[L, U]``."""
    worst = 0.0
    for k in range(len(q.Y)):
        if not barriers.L.is_sentinel:
            worst = max(worst, float(np.max(barriers.L[k] - q.Y[k])))
        if not barriers.U.is_sentinel:
            worst = max(worst, float(np.max(q.Y[k] - barriers.U[k])))
    return worst if math.isfinite(worst) else math.inf
