"""Discrete Brownian models: time grids, binomial lattices and sampled path bundles.

The lattice is a recombining binomial tree with increments ``±sqrt(dt)`` per
coordinate and branch probability 1/2; in dimension ``d`` it is the d-fold
product.  A node at step ``k`` is addressed by the integer vector ``j`` of
up-move counts, so the layer at step ``k`` is an array of shape ``(k+1,)*d``
and the Brownian state at the node is ``(2*j - k) * sqrt(dt)``.

Every process living on the lattice is stored layer by layer in a
:class:`NodeProcess`.  Because the tree recombines, the state ``(t, x)``
determines the node, so node processes can also be called as functions of
``(t, x)``; that is how barriers and forcing terms enter generator closures.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

MAX_LATTICE_DIM = 2


class LatticeError(ValueError):
    """Invalid lattice construction or lattice operation."""


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0 or not math.isfinite(self.horizon):
            raise LatticeError(f"horizon must be a positive real, got {self.horizon!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise LatticeError(f"n_steps must be a positive integer, got {self.n_steps!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def time(self, k: int) -> float:
        return k * self.dt

    def step_of(self, t) -> np.ndarray:
        """Nearest step index for time(s) ``t``."""
        return np.rint(np.asarray(t, dtype=float) / self.dt).astype(int)


@lru_cache(maxsize=4096)
def _node_weights(k: int, dim: int) -> np.ndarray:
    # exact integer arithmetic, rounded once
    w1 = np.array([math.comb(k, j) / 2**k for j in range(k + 1)])
    w = w1
    for _ in range(dim - 1):
        w = np.multiply.outer(w, w1)
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class BrownianLattice:
    grid: TimeGrid
    dim: int = 1

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.grid.dt)

    def shape(self, k: int) -> tuple[int, ...]:
        self._check_step(k)
        return (k + 1,) * self.dim

    def n_nodes(self, k: int) -> int:
        return (k + 1) ** self.dim

    def states(self, k: int) -> np.ndarray:
        """Brownian state at every node of step ``k``, shape ``(k+1,)*d + (d,)``."""
        self._check_step(k)
        axis = (2.0 * np.arange(k + 1) - k) * self.sqrt_dt
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def weights(self, k: int) -> np.ndarray:
        """Probability of reaching each node of step ``k``."""
        self._check_step(k)
        return _node_weights(k, self.dim)

    def expectation(self, layer: np.ndarray, k: int) -> np.ndarray:
        """E[layer] under the node weights of step ``k`` (trailing dims kept)."""
        w = self.weights(k)
        layer = np.asarray(layer, dtype=float)
        extra = layer.ndim - w.ndim
        return np.tensordot(w, layer, axes=(tuple(range(w.ndim)), tuple(range(w.ndim)))) if extra else float(np.sum(w * layer))

    def _check_step(self, k: int) -> None:
        if not 0 <= k <= self.grid.n_steps:
            raise LatticeError(f"step {k} outside [0, {self.grid.n_steps}]")


def build_lattice(grid: TimeGrid, d: int = 1) -> BrownianLattice:
    """Binomial model of ``d``-dimensional Brownian motion on ``grid``.

    Dimensions above :data:`MAX_LATTICE_DIM` are refused because the product
    lattice has ``(k+1)**d`` nodes per step; use :func:`sample_paths` instead.
    """
    if int(d) != d or d < 1:
        raise LatticeError(f"dimension must be a positive integer, got {d!r}")
    if d > MAX_LATTICE_DIM:
        raise LatticeError(
            f"dimension {d} too large for the product lattice (max {MAX_LATTICE_DIM}); "
            "use the Monte Carlo backend"
        )
    if grid.n_steps < 1:
        raise LatticeError("zero steps")
    return BrownianLattice(grid, int(d))


@dataclass(frozen=True, eq=False)
class NodeProcess:
    """An adapted process sampled on every node of a lattice.

    ``values[k]`` holds the layer at step ``k``; trailing axes beyond the
    node axes carry vector components (e.g. ``Z``).  Increment-type
    processes (``dK``, ``Z``) have ``n_steps`` layers, state-type processes
    ``n_steps + 1``.

    ``sentinel`` marks an absent barrier: ``-1`` for ``L = -inf``, ``+1`` for
    ``U = +inf``.  Sentinel layers are filled with the matching infinity so
    clamping arithmetic stays correct, but operations that need finite data
    refuse them.
    """

    lattice: BrownianLattice
    values: tuple
    sentinel: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        lat = self.lattice
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        if len(vals) not in (lat.n_steps, lat.n_steps + 1):
            raise LatticeError(
                f"process needs {lat.n_steps} or {lat.n_steps + 1} layers, got {len(vals)}"
            )
        for k, v in enumerate(vals):
            if v.shape[: lat.dim] != lat.shape(k):
                raise LatticeError(f"layer {k} has shape {v.shape}, expected {lat.shape(k)}+...")
        if self.sentinel not in (-1, 0, 1):
            raise LatticeError("sentinel must be -1, 0 or +1")
        object.__setattr__(self, "values", vals)

    # construction -----------------------------------------------------------
    @classmethod
    def from_function(cls, lattice: BrownianLattice, fn: Callable, *, n_layers: int | None = None,
                      name: str = "") -> "NodeProcess":
        """Layer ``k`` is ``fn(t_k, states(k))``."""
        n_layers = lattice.n_steps + 1 if n_layers is None else n_layers
        layers = []
        for k in range(n_layers):
            x = lattice.states(k)
            v = np.asarray(fn(lattice.grid.time(k), x), dtype=float)
            layers.append(np.broadcast_to(v, lattice.shape(k) + v.shape[lattice.dim:]).copy()
                          if v.ndim >= lattice.dim else np.full(lattice.shape(k), float(v)))
        return cls(lattice, tuple(layers), name=name)

    @classmethod
    def constant(cls, lattice: BrownianLattice, c: float, *, n_layers: int | None = None,
                 name: str = "") -> "NodeProcess":
        n_layers = lattice.n_steps + 1 if n_layers is None else n_layers
        return cls(lattice, tuple(np.full(lattice.shape(k), float(c)) for k in range(n_layers)), name=name)

    @classmethod
    def minus_infinity(cls, lattice: BrownianLattice) -> "NodeProcess":
        layers = tuple(np.full(lattice.shape(k), -np.inf) for k in range(lattice.n_steps + 1))
        return cls(lattice, layers, sentinel=-1, name="-inf")

    @classmethod
    def plus_infinity(cls, lattice: BrownianLattice) -> "NodeProcess":
        layers = tuple(np.full(lattice.shape(k), np.inf) for k in range(lattice.n_steps + 1))
        return cls(lattice, layers, sentinel=+1, name="+inf")

    # access -----------------------------------------------------------------
    @property
    def is_sentinel(self) -> bool:
        return self.sentinel != 0

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.values[k]

    def __call__(self, t, x) -> np.ndarray:
        """Value at the node with time ``t`` and state ``x`` (shape ``(..., d)``)."""
        lat = self.lattice
        x = np.asarray(x, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        if self.is_sentinel:
            shape = np.broadcast_shapes(t_arr.shape, x.shape[:-1])
            return np.full(shape, self.sentinel * np.inf)
        ks = lat.grid.step_of(t_arr)
        if ks.ndim == 0 or np.all(ks == ks.flat[0]):
            return self._lookup(int(ks.flat[0]), x)
        out = np.empty(np.broadcast_shapes(ks.shape, x.shape[:-1]))
        kb = np.broadcast_to(ks, out.shape)
        xb = np.broadcast_to(x, out.shape + x.shape[-1:])
        for k in np.unique(kb):
            m = kb == k
            out[m] = self._lookup(int(k), xb[m])
        return out

    def _lookup(self, k: int, x: np.ndarray) -> np.ndarray:
        lat = self.lattice
        if x.shape[-1] != lat.dim:
            raise LatticeError(f"state has {x.shape[-1]} coordinates, lattice has {lat.dim}")
        if not 0 <= k < len(self.values):
            raise LatticeError(f"step {k} outside the process layers")
        jf = (x / lat.sqrt_dt + k) / 2.0
        j = np.rint(jf).astype(int)
        if np.any(np.abs(jf - j) > 1e-6) or np.any(j < 0) or np.any(j > k):
            raise LatticeError("state is not a lattice node at this step")
        return self.values[k][tuple(j[..., i] for i in range(lat.dim))]

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "NodeProcess":
        return NodeProcess(self.lattice, tuple(fn(v) for v in self.values))


def as_layer(values, k: int) -> np.ndarray:
    if isinstance(values, NodeProcess):
        if values.is_sentinel:
            raise LatticeError("sentinel process encountered where finite values are required")
        return values.values[k]
    return np.asarray(values, dtype=float)


def conditional_expectation(lattice: BrownianLattice, next_values, k: int) -> np.ndarray:
    """E[next | node] for every node of step ``k``; ``next_values`` lives on step ``k+1``."""
    if not 0 <= k < lattice.n_steps:
        raise LatticeError(f"step {k} out of range for a backward step")
    v = as_layer(next_values, k + 1)
    if v.shape[: lattice.dim] != lattice.shape(k + 1):
        raise LatticeError(f"next_values has shape {v.shape}, expected layer of step {k + 1}")
    if not np.all(np.isfinite(v)):
        raise LatticeError("non-finite value encountered in conditional expectation")
    for axis in range(lattice.dim):
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        v = 0.5 * (v[tuple(lo)] + v[tuple(hi)])
    return v


def martingale_coefficient(lattice: BrownianLattice, next_values, k: int) -> np.ndarray:
    """Z_k = E[next * dB | node] / dt, shape ``(k+1,)*d + (d,)``.

    For d = 1 this is ``(up - down) / (2 sqrt(dt))`` and the one-step
    representation ``next = E[next] + Z dB`` is exact on both branches.
    """
    if not 0 <= k < lattice.n_steps:
        raise LatticeError(f"step {k} out of range for a backward step")
    v = as_layer(next_values, k + 1)
    if v.shape != lattice.shape(k + 1):
        raise LatticeError(f"next_values has shape {v.shape}, expected {lattice.shape(k + 1)}")
    if not np.all(np.isfinite(v)):
        raise LatticeError("non-finite value encountered in martingale coefficient")
    comps = []
    for i in range(lattice.dim):
        w = v
        for axis in range(lattice.dim):
            lo = [slice(None)] * lattice.dim
            hi = [slice(None)] * lattice.dim
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            if axis == i:
                w = (w[tuple(hi)] - w[tuple(lo)]) / (2.0 * lattice.sqrt_dt)
            else:
                w = 0.5 * (w[tuple(lo)] + w[tuple(hi)])
        comps.append(w)
    return np.stack(comps, axis=-1)


def children(lattice: BrownianLattice, k: int):
    """Yield ``(index_slices, signs)`` for each of the 2**d children of step-``k`` nodes.

    ``layer[k+1][index_slices]`` aligns the child with its parent array at step
    ``k``; ``signs`` is the increment direction per coordinate.
    """
    for signs in itertools.product((-1, 1), repeat=lattice.dim):
        idx = tuple(slice(1, k + 2) if s > 0 else slice(0, k + 1) for s in signs)
        yield idx, np.array(signs, dtype=float)


# Monte Carlo backend ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathBundle:
    """Sampled Brownian increments ``dB[path, step, coord]`` with the seed that made them.

    Draws come from NumPy's ``Philox`` counter-based generator so a seed
    reproduces the bundle bit-for-bit on any platform.
    """

    grid: TimeGrid
    dim: int
    seed: int
    increments: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def paths(self) -> np.ndarray:
        """Brownian states including B_0 = 0, shape ``(M, N+1, d)``."""
        m, n, d = self.increments.shape
        out = np.zeros((m, n + 1, d))
        np.cumsum(self.increments, axis=1, out=out[:, 1:, :])
        return out


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded counter-based generator; ``stream`` selects an independent key."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def sample_paths(grid: TimeGrid, d: int, n_paths: int, seed: int) -> PathBundle:
    if int(n_paths) != n_paths or n_paths < 1:
        raise LatticeError(f"path count must be >= 1, got {n_paths!r}")
    if int(d) != d or d < 1:
        raise LatticeError(f"dimension must be a positive integer, got {d!r}")
    if seed is None:
        raise LatticeError("a seed is required")
    rng = philox(seed)
    dB = rng.standard_normal((int(n_paths), grid.n_steps, int(d))) * math.sqrt(grid.dt)
    return PathBundle(grid, int(d), int(seed), dB)


# Path ensembles on the lattice ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """A set of lattice paths with probabilities, for path functionals (sup, hitting times).

    ``index[p, k]`` is the node multi-index of path ``p`` at step ``k``.  The
    ensemble is either every path (``exact``) or a seeded sample with equal
    weights.
    """

    lattice: BrownianLattice
    index: np.ndarray
    weights: np.ndarray
    exact: bool

    def along(self, process) -> np.ndarray:
        """Values of a node process along every path, shape ``(P, n_layers) + extra``."""
        vals = process.values if isinstance(process, NodeProcess) else process
        cols = []
        for k, layer in enumerate(vals):
            idx = self.index[:, k, :]
            cols.append(np.asarray(layer)[tuple(idx[:, i] for i in range(self.lattice.dim))])
        return np.stack(cols, axis=1)

    def mean(self, per_path: np.ndarray) -> float:
        return float(np.sum(self.weights * per_path))


def path_ensemble(lattice: BrownianLattice, *, max_exact: int = 2**16, n_samples: int = 2**14,
                  seed: int = 0) -> PathEnsemble:
    n, d = lattice.n_steps, lattice.dim
    if n * d <= math.log2(max_exact):
        moves = np.array(list(itertools.product((0, 1), repeat=n * d)), dtype=np.int64)
        moves = moves.reshape(-1, n, d)
        weights = np.full(moves.shape[0], 1.0 / moves.shape[0])
        exact = True
    else:
        moves = philox(seed, stream=7).integers(0, 2, size=(n_samples, n, d))
        weights = np.full(n_samples, 1.0 / n_samples)
        exact = False
    index = np.zeros((moves.shape[0], n + 1, d), dtype=np.int64)
    np.cumsum(moves, axis=1, out=index[:, 1:, :])
    return PathEnsemble(lattice, index, weights, exact)


def max_path_sum(lattice: BrownianLattice, increments: Sequence[np.ndarray]) -> tuple[float, float]:
    """Exact (max, min) over all paths and times of the running sum of node increments.

    Forward max-plus recursion; ``increments[k]`` is the layer at step ``k``
    and the running sum at step ``k`` includes increments of steps ``< k``.
    """
    hi = np.zeros(lattice.shape(0))
    lo = np.zeros(lattice.shape(0))
    best_hi, best_lo = 0.0, 0.0
    for k, inc in enumerate(increments):
        a_hi = hi + inc
        a_lo = lo + inc
        nxt_hi = np.full(lattice.shape(k + 1), -np.inf)
        nxt_lo = np.full(lattice.shape(k + 1), np.inf)
        for idx, _ in children(lattice, k):
            nxt_hi[idx] = np.maximum(nxt_hi[idx], a_hi)
            nxt_lo[idx] = np.minimum(nxt_lo[idx], a_lo)
        hi, lo = nxt_hi, nxt_lo
        best_hi = max(best_hi, float(hi.max()))
        best_lo = min(best_lo, float(lo.min()))
    return best_hi, best_lo
