"""Diagnostics and test batteries built on the solvers.

* :func:`estimate_norms` - ``S^beta``, ``M^beta``, ``H^1`` and a class-(D) proxy curve.
* :func:`mokobodzki_check` - a semimartingale witness between the barriers.
* :func:`comparison_battery` - ordering of solutions under ordered data.
* :func:`uniqueness_probe` - agreement of re-runs and of the one-sided ladder limits.
* :func:`approximation_battery` - monotone generator sequences solved as reflected problems.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import norms
from .bsde import MonotonicityError, Numerics, as_forcing, regularized_generator, solve_bsde
from .generators.convolution import SearchConfig
from .generators.spec import GeneratorSpec
from .lattice import BrownianLattice, NodeProcess, conditional_expectation, martingale_coefficient
from .reflected import (
    BarrierPair,
    SolutionQuadruple,
    gap_norms,
    penalization_ladder_mixed,
    solve_drbsde,
)


# norms --------------------------------------------------------------------------------

@dataclass
class NormReport:
    beta: float
    s_beta: float | None = None
    m_beta: float | None = None
    h1: float | None = None
    classD_curve: list[tuple[float, float]] = field(default_factory=list)
    s_beta_se: float = 0.0
    m_beta_se: float = 0.0
    exact: bool = True


def _mean_se(ens, per_path):
    m = ens.mean(per_path)
    if ens.exact:
        return m, 0.0
    return m, float(np.std(per_path, ddof=1) / math.sqrt(per_path.shape[0]))


def estimate_norms(lattice: BrownianLattice, Y=None, Z=None, X=None, beta: float = 0.5,
                   c_grid: Sequence[float] | None = None, seed: int = 0) -> NormReport:
    """Empirical norms on the lattice path measure.

    The class-(D) proxy evaluates ``sup_tau E[|Y_tau| 1{|Y_tau| > c}]`` over
    first hitting times of ``|Y| >= a`` (``a`` on a logarithmic grid) and the
    deterministic grid times.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    ens = norms.ensemble_for(lattice, seed)
    rep = NormReport(beta, exact=ens.exact)
    if Y is not None:
        vals = np.abs(ens.along(Y.values if isinstance(Y, NodeProcess) else Y))
        rep.s_beta, rep.s_beta_se = _mean_se(ens, np.max(vals, axis=1) ** beta)
        top = float(vals.max(initial=0.0))
        if c_grid is None:
            c_grid = [0.0] + (list(np.geomspace(max(top, 1e-12) * 1e-3, max(top, 1e-12), 16)) if top > 0 else [])
        levels = list(c_grid)
        taus = []
        for a in levels:
            hit = vals >= a
            first = np.where(hit.any(axis=1), np.argmax(hit, axis=1), vals.shape[1] - 1)
            taus.append(vals[np.arange(vals.shape[0]), first])
        taus.extend(vals[:, k] for k in range(vals.shape[1]))
        stopped = np.stack(taus, axis=0)  # (family, P)
        curve = []
        for c in sorted(c_grid):
            tail = np.where(stopped > c, stopped, 0.0)
            curve.append((float(c), float(np.max(tail @ ens.weights))))
        rep.classD_curve = curve
    if Z is not None:
        z = ens.along(Z.values if isinstance(Z, NodeProcess) else Z)
        sq = np.sum(z.reshape(z.shape[0], z.shape[1], -1) ** 2, axis=(1, 2)) * lattice.dt
        rep.m_beta, rep.m_beta_se = _mean_se(ens, sq ** (beta / 2.0))
    if X is not None:
        rep.h1 = norms.h1(lattice, X)
    return rep


# Mokobodzki witness ----------------------------------------------------------------------

class WitnessError(ValueError):
    pass


@dataclass
class MokobodzkiWitness:
    X: NodeProcess
    dC: list
    H: NodeProcess
    c_variation: float
    g_at_X_norm: float
    sandwich_ok: bool
    violations: list = field(default_factory=list)
    residual: float = 0.0
    orthogonal_residual: float = 0.0


def _decomposition_residual(lattice, X, dC, H):
    """Max over edges of ``X_{k+1} - X_k - dC_k - H_k . dB``, split into drift and orthogonal parts."""
    drift = orth = 0.0
    sq = lattice.sqrt_dt
    for k in range(lattice.n_steps):
        mean_edge = np.zeros(lattice.shape(k))
        edges = []
        for signs in np.ndindex(*(2,) * lattice.dim):
            idx = tuple(slice(s, s + k + 1) for s in signs)
            dB = (2 * np.array(signs) - 1) * sq
            e = X[k + 1][idx] - X[k] - dC[k] - np.tensordot(H[k], dB, axes=([-1], [0]))
            edges.append(e)
            mean_edge += e / 2**lattice.dim
        drift = max(drift, float(np.max(np.abs(mean_edge))))
        for e in edges:
            orth = max(orth, float(np.max(np.abs(e - mean_edge))))
    return drift, orth


def mokobodzki_check(lattice: BrownianLattice, g: GeneratorSpec, barriers: BarrierPair,
                     strategy: str = "use_drbsde_solution", solution: SolutionQuadruple | None = None,
                     X=None, xi=None, V=None, numerics: Numerics | None = None,
                     tol: float = 1e-10) -> MokobodzkiWitness:
    """Assemble and check a witness ``X = X_0 + sum dC + sum H dB`` with ``L <= X <= U``.

    ``use_drbsde_solution`` takes ``X = Y``, ``dC = -(G dt + dV + dK - dA)``
    and ``H = Z`` from a direct-scheme solution (solving it first when only
    ``xi`` is given); ``user_supplied`` takes ``X`` and uses its Doob
    decomposition on the lattice.
    """
    V = as_forcing(lattice, V)
    N, dt = lattice.n_steps, lattice.dt
    if strategy == "use_drbsde_solution":
        if solution is None:
            if xi is None:
                raise WitnessError("no solution available: pass a solution or the terminal value")
            solution = solve_drbsde(lattice, xi, g, V, barriers, numerics)
        Xp, H = solution.Y, solution.Z
        dC = [-(solution.G[k] * dt + V.layer(k) + solution.dK[k] - solution.dA[k]) for k in range(N)]
    elif strategy == "user_supplied":
        if X is None:
            raise WitnessError("user_supplied strategy needs X")
        Xp = X if isinstance(X, NodeProcess) else NodeProcess.from_function(lattice, X, name="X")
        H = NodeProcess(lattice, tuple(martingale_coefficient(lattice, Xp, k) for k in range(N)), name="H")
        dC = [conditional_expectation(lattice, Xp, k) - Xp[k] for k in range(N)]
    else:
        raise ValueError("strategy must be 'use_drbsde_solution' or 'user_supplied'")

    violations = []
    for k in range(N + 1):
        bad = np.zeros(lattice.shape(k), dtype=bool)
        if not barriers.L.is_sentinel:
            bad |= Xp[k] < barriers.L[k] - tol
        if not barriers.U.is_sentinel:
            bad |= Xp[k] > barriers.U[k] + tol
        violations.extend((k, tuple(int(i) for i in j)) for j in np.argwhere(bad))
    drift, orth = _decomposition_residual(lattice, Xp, dC, H)
    zero = np.zeros(lattice.dim)
    g_norm = 0.0
    for k in range(N):
        with np.errstate(all="ignore"):
            gv = np.asarray(g(lattice.grid.time(k), lattice.states(k), Xp[k], zero), dtype=float)
        g_norm += lattice.expectation(np.abs(np.broadcast_to(gv, lattice.shape(k))), k) * dt
    c_var = norms.expected_total(lattice, [np.abs(c) for c in dC])
    return MokobodzkiWitness(Xp, dC, H, c_var, float(g_norm), not violations, violations, drift, orth)


# comparison battery -----------------------------------------------------------------------

SOLVERS = ("bsde", "rbsde_lower", "rbsde_upper", "drbsde")


@dataclass
class ProblemData:
    xi: object
    g: GeneratorSpec
    V: object = None
    L: object = None
    U: object = None


@dataclass
class ComparisonCase:
    case_id: str
    lattice: BrownianLattice
    solver: str
    first: ProblemData
    second: ProblemData
    # which hypothesis branch the pair instantiates: "g1<=g2" (pointwise) or "one_sided"
    branch: str = "g1<=g2"
    equal_barriers: bool = False
    # outside the Lipschitz setting, a violation is reported as inconclusive
    osgood: bool = False
    expect_strict_root: bool = False


@dataclass
class CaseResult:
    case_id: str
    verdict: str
    y_margin: float
    node: tuple | None = None
    k_ordering: bool | None = None
    strict_root: bool | None = None
    Y1: NodeProcess | None = None
    Y2: NodeProcess | None = None

    def reverify(self, tol: float = 1e-9) -> bool:
        """Independent recheck of a failure from the stored solutions."""
        if self.node is None or self.Y1 is None:
            return False
        k, j = self.node
        a, b = float(self.Y1[k][j]), float(self.Y2[k][j])
        return a - b > tol * max(1.0, abs(b))


@dataclass
class BatteryReport:
    results: list[CaseResult]

    @property
    def failures(self) -> list[CaseResult]:
        return [r for r in self.results if r.verdict == "fail"]

    def count(self, verdict: str) -> int:
        return sum(r.verdict == verdict for r in self.results)


def _solve_case(lattice, solver, data: ProblemData, numerics):
    if solver == "bsde":
        sol = solve_bsde(lattice, data.xi, data.g, data.V, numerics)
        return sol, None
    L = data.L if solver in ("rbsde_lower", "drbsde") else None
    U = data.U if solver in ("rbsde_upper", "drbsde") else None
    q = solve_drbsde(lattice, data.xi, data.g, data.V, BarrierPair.build(lattice, L, U), numerics)
    return q, q


def _first_excess(lo: NodeProcess, hi: NodeProcess, tol: float):
    worst, node = -math.inf, None
    for k, (a, b) in enumerate(zip(lo.values, hi.values)):
        ex = a - b - tol * np.maximum(1.0, np.abs(b))
        j = np.unravel_index(int(np.argmax(ex)), ex.shape)
        if ex[j] > worst:
            worst, node = float(ex[j]), (k, tuple(int(i) for i in j))
    return worst, node


def run_case(case: ComparisonCase, numerics: Numerics | None = None, tol: float = 1e-9) -> CaseResult:
    if case.solver not in SOLVERS:
        raise ValueError(f"unknown solver {case.solver!r}")
    s1, q1 = _solve_case(case.lattice, case.solver, case.first, numerics)
    s2, q2 = _solve_case(case.lattice, case.solver, case.second, numerics)
    excess, node = _first_excess(s1.Y, s2.Y, tol)
    ok = excess <= 0
    k_ok = None
    if case.equal_barriers and q1 is not None:
        k_ok = True
        for k in range(case.lattice.n_steps):
            lim = tol * np.maximum(1.0, np.abs(q1.dK[k]) + np.abs(q1.dA[k]))
            if np.any(q2.dK[k] - q1.dK[k] > lim) or np.any(q1.dA[k] - q2.dA[k] > lim):
                k_ok = False
                break
    strict = None
    if case.expect_strict_root:
        strict = s1.y0 < s2.y0
    passed = ok and k_ok is not False and strict is not False
    verdict = "pass" if passed else ("inconclusive" if case.osgood else "fail")
    res = CaseResult(case.case_id, verdict, excess, None if ok else node, k_ok, strict)
    if not ok:
        res.Y1, res.Y2 = s1.Y, s2.Y
    return res


def comparison_battery(cases: Sequence[ComparisonCase], numerics: Numerics | None = None, threads: int = 1,
                       tol: float = 1e-9) -> BatteryReport:
    """Solve each ordered pair and check nodewise ordering (and K/A ordering for equal barriers)."""
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: run_case(c, numerics, tol), cases))
    else:
        results = [run_case(c, numerics, tol) for c in cases]
    return BatteryReport(sorted(results, key=lambda r: r.case_id))


def _const(v: float):
    return lambda t, x: np.full(np.shape(x)[:-1], v)


def _clipped_quadratic(p, shift: float, lo: float, hi: float):
    return lambda t, x: np.clip(np.clip(p[0] + p[1] * x[..., 0] + 0.3 * p[2] * x[..., 0] ** 2, lo, hi) + shift,
                                lo, hi)


def _osgood_driver(gap: float) -> GeneratorSpec:
    from .generators.catalog import h

    return GeneratorSpec(lambda t, x, y, z: h(np.abs(y)) - 0.5 * np.asarray(y) - gap, name=f"osgood-{gap:.3f}",
                         classes={"H1i"}, rho=h, growth_constant=2.5)


def random_comparison_cases(n_cases: int = 200, seed: int = 0, osgood_share: float = 0.1) -> list[ComparisonCase]:
    """Randomised ordered-data pairs across the four solvers.

    Lipschitz drivers ``a y + b z + c`` keep ``|b| sqrt(dt) <= 1`` so the
    discrete comparison principle applies; a share of cases use the
    ``-x ln x`` Osgood driver at ``dt <= 1/128``.  Half of the reflected
    cases share their barriers, the rest raise both barriers of the second
    problem by 0.1.
    """
    from .generators.spec import linear_generator
    from .lattice import TimeGrid, build_lattice, philox

    rng = philox(seed, stream=3)
    cases = []
    for i in range(n_cases):
        osg = bool(rng.random() < osgood_share)
        N = int(rng.choice([128, 160, 192])) if osg else int(rng.choice([4, 8, 16, 32, 64]))
        lat = build_lattice(TimeGrid(1.0, N), 1)
        solver = SOLVERS[i % 4]
        p = rng.normal(size=3)
        q = rng.normal(size=3)
        shift = abs(float(rng.normal())) * float(rng.random() < 0.7)
        lo = -0.6 + 0.2 * float(rng.random())
        hi = 0.6 + 0.2 * float(rng.random())
        if osg:
            gap = abs(float(rng.normal())) * 0.5
            g1, g2 = _osgood_driver(gap), _osgood_driver(0.0)
        else:
            a = float(np.clip(q[0], -2, 2))
            bmax = 1.0 / math.sqrt(lat.dt)
            b = float(np.clip(2.0 * q[1], -bmax, bmax))
            c = float(q[2])
            gap = abs(float(rng.normal())) * 0.5 * float(rng.random() < 0.7)
            g1, g2 = linear_generator(a, b, c - gap), linear_generator(a, b, c)
        same = bool(rng.random() < 0.5)
        raise_by = 0.0 if same else 0.1
        first = ProblemData(_clipped_quadratic(p, 0.0, lo, hi), g1, None, _const(lo), _const(hi))
        # the second terminal value stays inside the raised barriers and above the first
        second = ProblemData(_clipped_quadratic(p, shift, lo + raise_by, hi), g2, None,
                             _const(lo + raise_by), _const(hi + raise_by))
        cases.append(ComparisonCase(f"case{i:03d}", lat, solver, first, second,
                                    equal_barriers=same and solver != "bsde", osgood=osg))
    return cases


# uniqueness probe ------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    verdict: str
    rerun_deviation: float
    ladder_deviation: float | None
    notes: list[str] = field(default_factory=list)


def uniqueness_probe(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, barriers: BarrierPair | None = None,
                     shifts: Sequence[float] = (-1.0, 1.0), dampings: Sequence[float] = (0.5, 1.0),
                     ladder_n: float | None = 1024, numerics: Numerics | None = None,
                     ladder_tol: float = 2e-2) -> UniquenessReport:
    """Re-solve from perturbed starting points and with different damping; compare ladder limits."""
    numerics = numerics or Numerics()
    barriers = barriers or BarrierPair.build(lattice)
    in_class = g.declares("H1i") and g.declares("H2")
    runs = []
    for s in shifts:
        for dmp in dampings:
            nm = replace(numerics, init_shift=s, damping=dmp)
            runs.append(solve_drbsde(lattice, xi, g, V, barriers, nm).Y)
    dev = max((norms.node_sup_diff(a, b) for i, a in enumerate(runs) for b in runs[i + 1:]), default=0.0)
    lad = None
    two_sided = not (barriers.L.is_sentinel or barriers.U.is_sentinel)
    if ladder_n is not None and two_sided:
        lo = penalization_ladder_mixed(lattice, xi, g, V, barriers.L, barriers.U, (ladder_n,), "via_upper_rbsde",
                                       numerics)
        hi = penalization_ladder_mixed(lattice, xi, g, V, barriers.L, barriers.U, (ladder_n,), "via_lower_rbsde",
                                       numerics)
        lad = norms.node_sup_diff(lo.limit.Y, hi.limit.Y)
    ok = dev <= 10 * numerics.tol * max(1.0, norms.node_sup(runs[0])) and (lad is None or lad <= ladder_tol)
    notes = []
    if not in_class:
        notes.append("generator does not declare H1i and H2; agreement is not asserted")
        verdict = "inconclusive"
    else:
        verdict = "pass" if ok else "fail"
    return UniquenessReport(verdict, dev, lad, notes)


# approximation battery ----------------------------------------------------------------------

@dataclass
class ApproximationReport:
    direction: int
    schedule: tuple
    table: list[dict]
    y_violations: int
    k_violations: int
    a_violations: int
    final_gaps: dict
    tail_nonincreasing: dict


def _count_increments(prev, cur, sign, tol):
    bad = 0
    for a, b in zip(prev.values, cur.values):
        bad += int(np.sum(sign * (a - b) > tol * np.maximum(1.0, np.abs(a))))
    return bad


def approximation_battery(lattice: BrownianLattice, xi, generators: Sequence[GeneratorSpec], direction: int,
                          V=None, barriers: BarrierPair | None = None, reference_g: GeneratorSpec | None = None,
                          schedule: Sequence[float] | None = None, numerics: Numerics | None = None,
                          beta: float = 0.5, tol: float = 1e-9, strict: bool = True) -> ApproximationReport:
    """Solve a monotone generator sequence as full (doubly) reflected problems.

    ``direction=+1`` means the generators increase with n, so ``Y^n`` must be
    nondecreasing, ``dK^n`` nonincreasing and ``dA^n`` nondecreasing; ``-1``
    mirrors all three.  Gaps are measured against the solution for
    ``reference_g`` (or the last entry when absent).
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    barriers = barriers or BarrierPair.build(lattice)
    schedule = tuple(schedule) if schedule is not None else tuple(range(1, len(generators) + 1))
    sols = [solve_drbsde(lattice, xi, gn, V, barriers, numerics) for gn in generators]
    ref = solve_drbsde(lattice, xi, reference_g, V, barriers, numerics) if reference_g is not None else sols[-1]
    yv = kv = av = 0
    table = []
    for i, (n, q) in enumerate(zip(schedule, sols)):
        if i:
            p = sols[i - 1]
            y_bad = _count_increments(p.Y, q.Y, direction, tol)
            k_bad = _count_increments(p.dK, q.dK, -direction, tol)
            a_bad = _count_increments(p.dA, q.dA, direction, tol)
            if strict and y_bad:
                raise MonotonicityError(f"Y^n direction violated at n={n} on {y_bad} nodes", -1, None, 0.0)
            yv, kv, av = yv + y_bad, kv + k_bad, av + a_bad
        table.append({"n": n, "Y0": q.y0, "K_T_mean": q.expected_K_T, "A_T_mean": q.expected_A_T,
                      **gap_norms(q, ref, beta)})
    tails = {}
    for key in ("y_sup", "z_m_beta", "k_sup", "a_sup"):
        s = [r[key] for r in table][-3:]
        tails[key] = all(b <= a + 1e-12 for a, b in zip(s, s[1:]))
    return ApproximationReport(direction, schedule, table, yv, kv, av,
                               {k: v for k, v in table[-1].items() if k not in ("n", "Y0", "K_T_mean", "A_T_mean")},
                               tails)


def convolution_sequence(g1: GeneratorSpec | None, g2: GeneratorSpec | None, schedule: Sequence[float],
                         kind: str = "inf", search: SearchConfig | None = None) -> list[GeneratorSpec]:
    """Regularised generators along the schedule (``inf`` increases with n, ``sup`` decreases)."""
    return [regularized_generator(g1, g2, n, kind, search) for n in schedule]


# reflected fuzz instances ---------------------------------------------------------------

@dataclass
class ReflectedInstance:
    case_id: str
    lattice: BrownianLattice
    xi: np.ndarray
    L: NodeProcess
    U: NodeProcess


def _smooth_field(rng, d: int, scale: float) -> Callable:
    """Random ``fn(t, x)`` mixing low-order polynomials and a trigonometric term."""
    a = rng.normal(size=(d, 3)) * scale
    c0, ct, w = float(rng.normal()) * scale, float(rng.normal()) * scale, float(rng.uniform(0.5, 3.0))

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        out = c0 + ct * np.asarray(t, dtype=float)
        for i in range(d):
            xi = x[..., i]
            out = out + a[i, 0] * xi + a[i, 1] * xi * xi / (1.0 + xi * xi) + a[i, 2] * np.sin(w * xi)
        return out

    return fn


def random_reflected_instances(n_cases: int = 100, seed: int = 0, max_steps: int = 64) -> list[ReflectedInstance]:
    """Random terminal values and barriers ``L <= U`` with ``L_T <= xi <= U_T``.

    About a fifth of the cases are two-dimensional (``n_steps <= 16`` there).
    The terminal layers of the barriers are clamped onto the terminal value
    where they would cross it.
    """
    from .lattice import TimeGrid, build_lattice, philox

    rng = philox(seed, stream=5)
    out = []
    for i in range(n_cases):
        d = 2 if rng.random() < 0.2 else 1
        N = int(rng.integers(1, (16 if d == 2 else max_steps) + 1))
        lat = build_lattice(TimeGrid(float(rng.uniform(0.25, 2.0)), N), d)
        fxi, fl = _smooth_field(rng, d, 1.0), _smooth_field(rng, d, 0.7)
        spread = float(rng.uniform(0.0, 0.6))
        wide = float(rng.uniform(0.0, 0.3))
        xi = np.asarray(fxi(lat.grid.horizon, lat.states(N)), dtype=float)
        L, U = [], []
        for k in range(N + 1):
            x = lat.states(k)
            lo = np.asarray(fl(lat.grid.time(k), x), dtype=float)
            hi = lo + spread + wide * np.abs(x[..., 0])
            if k == N:
                lo, hi = np.minimum(lo, xi), np.maximum(hi, xi)
            L.append(lo)
            U.append(hi)
        out.append(ReflectedInstance(f"fuzz{i:03d}", lat, xi, NodeProcess(lat, tuple(L), name="L"),
                                     NodeProcess(lat, tuple(U), name="U")))
    return out
