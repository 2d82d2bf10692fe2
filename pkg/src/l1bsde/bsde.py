"""Backward solvers for BSDE(xi, g + dV) on the lattice and on sampled paths.

One backward step solves, node by node,

    y = E[Y_{k+1} | node] + g(t_k, x, y, Z_k) dt + dV_k,
    Z_k = E[Y_{k+1} dB_k | node] / dt,

implicitly in ``y`` and explicitly in ``z``.  The scalar equation is solved by
damped Picard iteration when the generator's declared stiffness makes that a
contraction, and otherwise (or when Picard stalls) by bracketing the root of
``F(y) = y - rhs(y)`` and running the Illinois variant of regula falsi with
a bisection safeguard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .generators.convolution import SearchConfig, inf_convolve_yz, inf_convolve_z
from .generators.spec import GeneratorSpec, add
from .lattice import (
    BrownianLattice,
    LatticeError,
    NodeProcess,
    PathBundle,
    conditional_expectation,
    martingale_coefficient,
    max_path_sum,
    philox,
)


class ContractionError(ValueError):
    """The step size is too large for the declared growth constant."""

    def __init__(self, message: str, required_steps: int):
        super().__init__(message)
        self.required_steps = required_steps


class FixedPointError(RuntimeError):
    """The implicit step did not converge at some node."""

    def __init__(self, message: str, step: int | None = None, node=None, residual: float = math.nan):
        super().__init__(message)
        self.step, self.node, self.residual = step, node, residual


class MonotonicityError(RuntimeError):
    """A sequence of solutions expected to be monotone was not."""

    def __init__(self, message: str, step: int, node, margin: float):
        super().__init__(message)
        self.step, self.node, self.margin = step, node, margin


class RegressionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Numerics:
    tol: float = 1e-12
    max_iter: int = 200
    picard_iter: int = 60
    damping: float = 1.0
    # Picard is skipped when stiffness * dt reaches this value
    picard_limit: float = 0.5
    beta: float = 0.5
    check_contraction: bool = True
    # shift of the initial guess, used to probe that the fixed point does not depend on it
    init_shift: float = 0.0

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")


# data -------------------------------------------------------------------------

def terminal_layer(lattice: BrownianLattice, xi) -> np.ndarray:
    """Terminal values on the last layer from a number, ``fn(t, x)``, array or node process."""
    N = lattice.n_steps
    if isinstance(xi, NodeProcess):
        if xi.is_sentinel:
            raise LatticeError("terminal value cannot be a sentinel")
        out = np.array(xi[len(xi) - 1], dtype=float)
    elif callable(xi):
        out = np.asarray(xi(lattice.grid.horizon, lattice.states(N)), dtype=float)
        out = np.broadcast_to(out, lattice.shape(N)).copy()
    else:
        out = np.broadcast_to(np.asarray(xi, dtype=float), lattice.shape(N)).copy()
    if not np.all(np.isfinite(out)):
        raise LatticeError("terminal value must be finite at every node")
    return out


@dataclass(frozen=True, eq=False)
class ForcingTerm:
    """Finite-variation forcing ``V`` stored as node increments ``dV_k`` (applied at step ``k``)."""

    lattice: BrownianLattice
    increments: tuple

    def __post_init__(self):
        lat = self.lattice
        if len(self.increments) != lat.n_steps:
            raise LatticeError(f"forcing needs {lat.n_steps} increment layers")
        layers = tuple(np.broadcast_to(np.asarray(v, dtype=float), lat.shape(k)).copy()
                       for k, v in enumerate(self.increments))
        for k, v in enumerate(layers):
            if not np.all(np.isfinite(v)):
                raise LatticeError(f"non-finite forcing increment at step {k}")
        object.__setattr__(self, "increments", layers)

    @classmethod
    def zero(cls, lattice: BrownianLattice) -> "ForcingTerm":
        return cls(lattice, tuple(0.0 for _ in range(lattice.n_steps)))

    @classmethod
    def from_rate(cls, lattice: BrownianLattice, rate: Callable) -> "ForcingTerm":
        """``dV_k = rate(t_k, x) dt``."""
        dt = lattice.dt
        return cls(lattice, tuple(np.asarray(rate(lattice.grid.time(k), lattice.states(k))) * dt
                                  for k in range(lattice.n_steps)))

    @classmethod
    def deterministic(cls, lattice: BrownianLattice, steps: Sequence[float]) -> "ForcingTerm":
        return cls(lattice, tuple(float(v) for v in steps))

    def layer(self, k: int) -> np.ndarray:
        return self.increments[k]

    @property
    def plus(self) -> tuple:
        return tuple(np.maximum(v, 0.0) for v in self.increments)

    @property
    def minus(self) -> tuple:
        return tuple(np.maximum(-v, 0.0) for v in self.increments)

    def total_variation(self) -> float:
        """Largest ``|V|_T`` over all lattice paths (the number itself when V is deterministic)."""
        return max_path_sum(self.lattice, [np.abs(v) for v in self.increments])[0]

    def expected_total_variation(self) -> float:
        return float(sum(self.lattice.expectation(np.abs(v), k) for k, v in enumerate(self.increments)))

    def future_sum(self) -> NodeProcess:
        """``E[sum_{j>=k} dV_j | node]`` at every node."""
        lat = self.lattice
        layers = [np.zeros(lat.shape(lat.n_steps))]
        for k in reversed(range(lat.n_steps)):
            layers.append(conditional_expectation(lat, layers[-1], k) + self.increments[k])
        return NodeProcess(lat, tuple(reversed(layers)), name="sum dV")


def as_forcing(lattice: BrownianLattice, V) -> ForcingTerm:
    if V is None:
        return ForcingTerm.zero(lattice)
    if isinstance(V, ForcingTerm):
        return V
    if callable(V):
        return ForcingTerm.from_rate(lattice, V)
    return ForcingTerm(lattice, tuple(V))


# implicit scalar solve ---------------------------------------------------------

@dataclass
class StepDiagnostics:
    iterations: np.ndarray
    residuals: np.ndarray
    bracketed: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "StepDiagnostics":
        return cls(np.zeros(n, dtype=int), np.zeros(n), np.zeros(n, dtype=int))

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max(initial=0.0))


def solve_implicit(rhs: Callable, y0: np.ndarray, numerics: Numerics, stiff_dt: float = 0.0,
                   where: str = ""):
    """Solve ``y = rhs(y, idx)`` for a flat vector of independent nodes.

    ``rhs(y_sub, idx)`` evaluates the right-hand side on the nodes ``idx``.
    Returns ``(y, iterations, residuals, bracketed_mask)``.
    """
    P = y0.shape[0]
    y = np.array(y0, dtype=float)
    iters = np.zeros(P, dtype=int)
    res = np.full(P, np.inf)
    todo = np.arange(P)
    tol = numerics.tol

    if stiff_dt < numerics.picard_limit:
        prev = np.full(P, np.inf)
        for _ in range(numerics.picard_iter):
            if todo.size == 0:
                break
            with np.errstate(all="ignore"):
                r = np.asarray(rhs(y[todo], todo), dtype=float)
            cur = np.abs(y[todo] - r)
            iters[todo] += 1
            ok = cur <= tol * np.maximum(1.0, np.abs(y[todo]))
            if ok.any():
                # one undamped polishing step, kept only where it lowers the residual
                done_idx = todo[ok]
                with np.errstate(all="ignore"):
                    r2 = np.asarray(rhs(r[ok], done_idx), dtype=float)
                res2 = np.abs(r[ok] - r2)
                better = res2 <= cur[ok]
                y[done_idx] = np.where(better, r[ok], y[done_idx])
                res[done_idx] = np.where(better, res2, cur[ok])
                iters[done_idx] += 1
            # stop Picard on nodes that blow up or stop contracting
            bad = ~np.isfinite(r) | ~(cur < prev[todo])
            move = ~ok & ~bad
            idx = todo[move]
            prev[idx] = cur[move]
            y[idx] = y[idx] + numerics.damping * (r[move] - y[idx])
            fallback = todo[~ok & bad]
            todo = idx
            if fallback.size:
                y[fallback] = np.where(np.isfinite(y[fallback]), y[fallback], y0[fallback])
                todo = np.concatenate([todo, fallback])
                break
    bracketed = np.zeros(P, dtype=bool)
    if todo.size:
        bracketed[todo] = True
        y[todo], it, res[todo] = _bracket_solve(rhs, y[todo], todo, numerics, where)
        iters[todo] += it
    return y, iters, res, bracketed


def _bracket_solve(rhs, start, idx, numerics: Numerics, where: str):
    def F(v, sub):
        with np.errstate(all="ignore"):
            return v - np.asarray(rhs(v, idx[sub]), dtype=float)

    n = start.shape[0]
    every = np.arange(n)
    start = np.where(np.isfinite(start), start, 0.0)
    f0 = F(start, every)
    if np.any(np.isnan(f0)):
        j = int(np.argmax(np.isnan(f0)))
        raise FixedPointError(f"generator is not finite at the initial guess{where}", node=int(idx[j]))
    a, b = start.copy(), start.copy()
    fa, fb = f0.copy(), f0.copy()
    iters = np.ones(n, dtype=int)
    w = np.maximum(np.where(np.isfinite(f0), np.abs(f0), 1.0), numerics.tol * np.maximum(1.0, np.abs(start)))
    # grow each side until the residual changes sign
    need_a = fa > 0
    wa = w.copy()
    for _ in range(1100):
        if not need_a.any():
            break
        s = np.flatnonzero(need_a)
        a[s] = start[s] - wa[s]
        fa[s] = F(a[s], s)
        iters[s] += 1
        need_a[s] = ~(fa[s] <= 0)
        if wa.max() > 1e300:
            break
        wa[s] *= 2.0
    need_b = fb < 0
    wb = w.copy()
    for _ in range(1100):
        if not need_b.any():
            break
        s = np.flatnonzero(need_b)
        b[s] = start[s] + wb[s]
        fb[s] = F(b[s], s)
        iters[s] += 1
        need_b[s] = ~(fb[s] >= 0)
        if wb.max() > 1e300:
            break
        wb[s] *= 2.0
    if need_a.any() or need_b.any():
        j = int(np.argmax(need_a | need_b))
        raise FixedPointError(f"could not bracket the implicit step{where}", node=int(idx[j]))

    y = np.where(fa == 0, a, b)
    res = np.where(fa == 0, 0.0, np.abs(fb))
    done = (fa == 0) | (fb == 0)
    side = np.zeros(n, dtype=int)
    tol = numerics.tol
    width0 = b - a
    for it in range(numerics.max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        A_, B_, FA, FB = a[act], b[act], fa[act], fb[act]
        with np.errstate(all="ignore"):
            c = B_ - FB * (B_ - A_) / (FB - FA)
        # bisection when the secant point is unusable or progress is slow
        slow = (b[act] - a[act]) > 0.5 * width0[act]
        bis = ~np.isfinite(c) | (c <= A_) | (c >= B_) | ~np.isfinite(FA) | ~np.isfinite(FB) | ((it % 3 == 2) & slow)
        c = np.where(bis, 0.5 * (A_ + B_), c)
        if it % 3 == 2:
            width0[act] = b[act] - a[act]
        fc = F(c, act)
        iters[act] += 1
        if np.any(np.isnan(fc)):
            j = act[int(np.argmax(np.isnan(fc)))]
            raise FixedPointError(f"generator is not finite inside the bracket{where}", node=int(idx[j]))
        scale = np.maximum(1.0, np.abs(c))
        conv = np.abs(fc) <= tol * scale
        collapsed = (B_ - A_) <= 4 * np.finfo(float).eps * scale
        y[act] = c
        res[act] = np.abs(fc)
        done[act] = conv | collapsed
        lo = fc < 0
        hi = ~lo
        # Illinois: halve the stale endpoint's residual when the same side is kept twice
        s_old = side[act]
        a[act[lo]], fa[act[lo]] = c[lo], fc[lo]
        fb[act[lo & (s_old == -1)]] *= 0.5
        b[act[hi]], fb[act[hi]] = c[hi], fc[hi]
        fa[act[hi & (s_old == 1)]] *= 0.5
        side[act] = np.where(lo, -1, 1)
    if not done.all():
        j = int(np.argmax(~done))
        raise FixedPointError(
            f"implicit step did not converge after {numerics.max_iter} iterations{where}",
            node=int(idx[j]), residual=float(res[j]))
    return y, iters, res


def check_step_size(g: GeneratorSpec, lattice_or_grid) -> None:
    """Refuse when ``A dt >= 1`` for the declared growth constant ``A``."""
    grid = getattr(lattice_or_grid, "grid", lattice_or_grid)
    A = g.growth_constant
    if A is None or A <= 0:
        return
    if A * grid.dt >= 1.0:
        need = int(math.floor(A * grid.horizon)) + 1
        raise ContractionError(
            f"step size dt={grid.dt:g} violates A*dt < 1 for {g.name} (A={A:g}); "
            f"use at least {need} steps", need)


# lattice solver -----------------------------------------------------------------

@dataclass(eq=False)
class SolutionPair:
    """Lattice solution ``(Y, Z)`` with the driver values the scheme used.

    ``G[k]`` is ``g(t_k, x, y_hat, Z_k)`` at the unconstrained implicit value,
    so ``Y_k = E[Y_{k+1}] + G_k dt + dV_k (+ dK_k - dA_k)`` up to the solver
    residual.
    """

    lattice: BrownianLattice
    Y: NodeProcess
    Z: NodeProcess
    G: NodeProcess
    diagnostics: list[StepDiagnostics]

    @property
    def y0(self) -> float:
        return float(np.ravel(self.Y[0])[0])

    @property
    def max_residual(self) -> float:
        return max((d.max_residual for d in self.diagnostics), default=0.0)


def _barrier_layer(B, k):
    if B is None or (isinstance(B, NodeProcess) and B.is_sentinel):
        return None
    return np.asarray(B[k], dtype=float)


def backward_sweep(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None, numerics: Numerics | None = None,
                   L=None, U=None):
    """Shared backward recursion with optional clamping to ``[L, U]`` after each implicit step.

    Returns ``(Y, Z, G, dK, dA, diagnostics)`` as layer lists.
    """
    numerics = numerics or Numerics()
    if numerics.check_contraction:
        check_step_size(g, lattice)
    V = as_forcing(lattice, V)
    N, d, dt = lattice.n_steps, lattice.dim, lattice.dt
    Y = [None] * (N + 1)
    Y[N] = terminal_layer(lattice, xi)
    Z, G, dK, dA, diags = [None] * N, [None] * N, [None] * N, [None] * N, [None] * N
    Lt, Ut = _barrier_layer(L, N), _barrier_layer(U, N)
    if Lt is not None and np.any(Y[N] < Lt):
        raise LatticeError("terminal value lies below the lower barrier")
    if Ut is not None and np.any(Y[N] > Ut):
        raise LatticeError("terminal value lies above the upper barrier")
    stiff_dt = g.stiffness * dt
    for k in reversed(range(N)):
        t = lattice.grid.time(k)
        e = conditional_expectation(lattice, Y[k + 1], k)
        z = martingale_coefficient(lattice, Y[k + 1], k)
        shape = e.shape
        x_f = lattice.states(k).reshape(-1, d)
        z_f = z.reshape(-1, d)
        base = (e + V.layer(k)).reshape(-1)

        def rhs(y, idx, base=base, x_f=x_f, z_f=z_f, t=t):
            return base[idx] + np.asarray(g(t, x_f[idx], y, z_f[idx]), dtype=float) * dt

        yhat, it, res, br = solve_implicit(rhs, base + numerics.init_shift, numerics, stiff_dt,
                                           where=f" at step {k}")
        with np.errstate(all="ignore"):
            gval = np.asarray(g(t, x_f, yhat, z_f), dtype=float)
        if not np.all(np.isfinite(gval)):
            j = int(np.argmax(~np.isfinite(gval)))
            raise FixedPointError(f"generator value is not finite at step {k}", step=k,
                                  node=np.unravel_index(j, shape))
        yhat = yhat.reshape(shape)
        y = yhat
        kinc = np.zeros(shape)
        ainc = np.zeros(shape)
        Lk, Uk = _barrier_layer(L, k), _barrier_layer(U, k)
        if Lk is not None and Uk is not None and np.any(Lk > Uk):
            node = tuple(int(i) for i in np.argwhere(Lk > Uk)[0])
            raise LatticeError(f"L > U at step {k}, node {node}")
        if Lk is not None:
            kinc = np.maximum(Lk - yhat, 0.0)
            y = np.maximum(y, Lk)
        if Uk is not None:
            ainc = np.maximum(yhat - Uk, 0.0)
            y = np.minimum(y, Uk)
        Y[k], Z[k], G[k], dK[k], dA[k] = y, z, gval.reshape(shape), kinc, ainc
        diags[k] = StepDiagnostics(it.reshape(shape), res.reshape(shape), br.reshape(shape).astype(int))
        if not np.all(np.isfinite(y)):
            raise FixedPointError(f"non-finite solution at step {k}", step=k)
    return Y, Z, G, dK, dA, diags


def solve_bsde(lattice: BrownianLattice, xi, g: GeneratorSpec, V=None,
               numerics: Numerics | None = None) -> SolutionPair:
    """Implicit backward Euler solution of BSDE(xi, g + dV) on the lattice."""
    Y, Z, G, _, _, diags = backward_sweep(lattice, xi, g, V, numerics)
    return SolutionPair(lattice, NodeProcess(lattice, tuple(Y), name="Y"),
                        NodeProcess(lattice, tuple(Z), name="Z"),
                        NodeProcess(lattice, tuple(G), name="G"), diags)


def implicit_residuals(sol, V=None) -> list[np.ndarray]:
    """``Y_k - (E[Y_{k+1}] + G_k dt + dV_k + dK_k - dA_k)`` per layer, recomputed from the stored solution."""
    lat = sol.lattice
    V = as_forcing(lat, V)
    out = []
    for k in range(lat.n_steps):
        e = conditional_expectation(lat, sol.Y[k + 1], k)
        extra = 0.0
        if hasattr(sol, "dK"):
            extra = sol.dK[k] - sol.dA[k]
        out.append(sol.Y[k] - (e + sol.G[k] * lat.dt + V.layer(k) + extra))
    return out


# Monte Carlo regression backend ----------------------------------------------------

@dataclass(frozen=True)
class RegressionConfig:
    degree: int = 2
    bootstrap: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be >= 0")


def _monomials(d: int, degree: int) -> list[tuple[int, ...]]:
    out = [()]
    for deg in range(1, degree + 1):
        def rec(prefix, start, left):
            if left == 0:
                out.append(tuple(prefix))
                return
            for i in range(start, d):
                rec(prefix + [i], i, left - 1)
        rec([], 0, deg)
    return out


def _basis(x: np.ndarray, t: float, degree: int) -> np.ndarray:
    if t <= 0:
        return np.ones((x.shape[0], 1))
    s = x / math.sqrt(t)
    cols = []
    for mono in _monomials(x.shape[1], degree):
        c = np.ones(x.shape[0])
        for i in mono:
            c = c * s[:, i]
        cols.append(c)
    return np.stack(cols, axis=1)


@dataclass(eq=False)
class MCSolution:
    bundle: PathBundle
    Y: np.ndarray  # (M, N+1)
    Z: np.ndarray  # (M, N, d)
    y0: float
    std_error: float
    condition_numbers: np.ndarray
    iterations: np.ndarray
    max_residual: float


def solve_bsde_mc(bundle: PathBundle, xi, g: GeneratorSpec, V=None,
                  regression: RegressionConfig | None = None,
                  numerics: Numerics | None = None) -> MCSolution:
    """Least-squares Monte Carlo version of :func:`solve_bsde`.

    Conditional expectations are regressions on polynomials of total degree
    ``degree`` in the normalised state ``B_k / sqrt(t_k)``; ``Z`` regresses
    ``Y_{k+1} dB_k / dt``.  ``V`` is a rate ``fn(t, x)`` (``dV = rate dt``).
    The standard error of ``Y_0`` is a bootstrap over paths of the first step.
    """
    regression = regression or RegressionConfig()
    numerics = numerics or Numerics()
    grid = bundle.grid
    if numerics.check_contraction:
        check_step_size(g, grid)
    N, dt, M, d = grid.n_steps, grid.dt, bundle.n_paths, bundle.dim
    paths = bundle.paths
    dB = bundle.increments
    Y = np.empty((M, N + 1))
    Zs = np.zeros((M, N, d))
    term = np.asarray(xi(grid.horizon, paths[:, N, :]) if callable(xi) else xi, dtype=float)
    Y[:, N] = np.broadcast_to(term, (M,))
    if not np.all(np.isfinite(Y[:, N])):
        raise LatticeError("terminal value must be finite on every path")
    conds = np.zeros(N)
    iters = np.zeros(N, dtype=int)
    worst = 0.0
    stiff_dt = g.stiffness * dt

    def step(k, ynext, xk, dBk, tk):
        Phi = _basis(xk, tk, regression.degree)
        if Phi.shape[1] > Phi.shape[0]:
            raise RegressionError(f"fewer paths than basis functions at step {k}")
        targets = np.column_stack([ynext, ynext[:, None] * dBk / dt])
        coef, _, rank, sv = np.linalg.lstsq(Phi, targets, rcond=None)
        if rank < Phi.shape[1]:
            raise RegressionError(f"singular regression at step {k} (rank {rank} < {Phi.shape[1]})")
        fitted = Phi @ coef
        e, z = fitted[:, 0], fitted[:, 1:]
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
        base = e + (np.asarray(V(tk, xk), dtype=float) * dt if V is not None else 0.0)
        base = np.broadcast_to(base, e.shape).copy()

        def rhs(y, idx):
            return base[idx] + np.asarray(g(tk, xk[idx], y, z[idx]), dtype=float) * dt

        y, it, res, _ = solve_implicit(rhs, base + numerics.init_shift, numerics, stiff_dt,
                                       where=f" at step {k}")
        return y, z, cond, int(it.max(initial=0)), float(res.max(initial=0.0))

    for k in reversed(range(N)):
        tk = grid.time(k)
        Y[:, k], Zs[:, k, :], conds[k], iters[k], r = step(k, Y[:, k + 1], paths[:, k, :], dB[:, k, :], tk)
        worst = max(worst, r)
    y0 = float(Y[0, 0])

    se = math.nan
    if regression.bootstrap > 1:
        rng = philox(regression.seed, stream=1)
        reps = np.empty(regression.bootstrap)
        x0 = np.zeros((1, d))
        for b in range(regression.bootstrap):
            pick = rng.integers(0, M, size=M)
            y1, dB0 = Y[pick, 1], dB[pick, 0, :]
            e = np.array([y1.mean()])
            z = (y1[:, None] * dB0).mean(axis=0)[None, :] / dt
            base = e + (np.asarray(V(0.0, x0), dtype=float) * dt if V is not None else 0.0)

            def rhs(y, idx, base=base, z=z):
                return base[idx] + np.asarray(g(0.0, x0[idx], y, z[idx]), dtype=float) * dt

            reps[b] = solve_implicit(rhs, np.asarray(base, dtype=float), numerics, stiff_dt)[0][0]
        se = float(np.std(reps, ddof=1))
    return MCSolution(bundle, Y, Zs, y0, se, conds, iters, worst)


# convolution approximation -----------------------------------------------------------

@dataclass(eq=False)
class ConvolutionSequence:
    schedule: tuple
    solutions: list[SolutionPair]
    kind: str
    cauchy_gap: float

    @property
    def limit(self) -> SolutionPair:
        return self.solutions[-1]


def sup_node_gap(a: NodeProcess, b: NodeProcess) -> float:
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)), initial=0.0)) for x, y in zip(a.values, b.values))


def regularized_generator(g1: GeneratorSpec | None, g2: GeneratorSpec | None, n: float, kind: str = "inf",
                          search: SearchConfig | None = None) -> GeneratorSpec:
    """``g_n = conv_z(g1) + conv_yz(g2)`` with penalty constants taken from the declared classes."""
    parts = []
    if g1 is not None:
        if g1.lam is None or g1.alpha is None:
            raise ValueError(f"{g1.name} must declare lam and alpha (sub-linear growth in z)")
        parts.append(inf_convolve_z(g1, n, g1.lam, g1.alpha, search, kind))
    if g2 is not None:
        if None in (g2.mu_tilde, g2.lam_tilde, g2.alpha_tilde):
            raise ValueError(f"{g2.name} must declare the linear-growth parameters")
        parts.append(inf_convolve_yz(g2, n, g2.mu_tilde, g2.lam_tilde, g2.alpha_tilde, search, kind))
    if not parts:
        raise ValueError("at least one of g1, g2 is required")
    gn = parts[0] if len(parts) == 1 else add(parts[0], parts[1])
    A = g1.growth_constant if g1 is not None else None
    return gn.with_(growth_constant=A if g2 is None else None)


def check_monotone(prev: NodeProcess, cur: NodeProcess, increasing: bool, tol: float = 1e-9):
    """Raise :class:`MonotonicityError` if ``cur`` is not above (below) ``prev`` at every node."""
    for k, (a, b) in enumerate(zip(prev.values, cur.values)):
        margin = (a - b) if increasing else (b - a)
        lim = tol * np.maximum(1.0, np.abs(a))
        if np.any(margin > lim):
            j = np.unravel_index(int(np.argmax(margin - lim)), margin.shape)
            raise MonotonicityError(
                f"sequence is not {'nondecreasing' if increasing else 'nonincreasing'} at step {k}, "
                f"node {tuple(int(i) for i in j)} (margin {float(margin[j]):.3e})",
                k, tuple(int(i) for i in j), float(margin[j]))


def solve_minimal_via_convolution(lattice: BrownianLattice, xi, g1: GeneratorSpec | None,
                                  g2: GeneratorSpec | None, V=None, schedule: Sequence[float] = (1, 2, 4, 8),
                                  kind: str = "inf", numerics: Numerics | None = None,
                                  search: SearchConfig | None = None,
                                  monotone_tol: float = 1e-9) -> ConvolutionSequence:
    """Solve along ``g_n`` for the schedule; ``kind='inf'`` gives the minimal, ``'sup'`` the maximal solution.

    The regularised solutions are asserted to be monotone in ``n``; the
    reported gap is the sup-node distance between the last two iterates.
    """
    schedule = tuple(schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    sols: list[SolutionPair] = []
    for n in schedule:
        gn = regularized_generator(g1, g2, n, kind, search)
        sol = solve_bsde(lattice, xi, gn, V, numerics)
        if sols:
            check_monotone(sols[-1].Y, sol.Y, increasing=(kind == "inf"), tol=monotone_tol)
        sols.append(sol)
    gap = sup_node_gap(sols[-1].Y, sols[-2].Y) if len(sols) > 1 else math.nan
    return ConvolutionSequence(schedule, sols, kind, gap)
