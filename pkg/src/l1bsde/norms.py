"""Empirical versions of the process norms on the lattice.

``S^beta`` and ``M^beta`` follow the ``p < 1`` convention: no root is taken,
so ``||Y||_{S^beta} = E[sup_t |Y_t|^beta]``.  Path functionals need a path
measure; the lattice enumerates every path when there are at most ``2**16``
of them and otherwise uses a fixed, seeded sample of ``2**14`` paths
(:func:`l1bsde.lattice.path_ensemble`).  Node-wise quantities (sup over
nodes, expectations of sums) are computed exactly by linearity.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .lattice import BrownianLattice, NodeProcess, PathEnsemble, max_path_sum, path_ensemble


@lru_cache(maxsize=16)
def ensemble_for(lattice: BrownianLattice, seed: int = 0) -> PathEnsemble:
    return path_ensemble(lattice, seed=seed)


def _layers(p):
    return p.values if isinstance(p, NodeProcess) else tuple(p)


def node_sup(p) -> float:
    """``max |X|`` over every node of every layer."""
    return max((float(np.max(np.abs(v), initial=0.0)) for v in _layers(p)), default=0.0)


def node_sup_diff(a, b) -> float:
    return max((float(np.max(np.abs(np.asarray(x) - np.asarray(y)), initial=0.0))
                for x, y in zip(_layers(a), _layers(b))), default=0.0)


def s_beta(lattice: BrownianLattice, p, beta: float, ensemble: PathEnsemble | None = None) -> float:
    """``E[sup_k |X_k|^beta]`` for a state-type process."""
    ens = ensemble or ensemble_for(lattice)
    vals = ens.along(_layers(p))
    return ens.mean(np.max(np.abs(vals), axis=1) ** beta)


def cumulative(increments: Sequence[np.ndarray], ens: PathEnsemble) -> np.ndarray:
    """Running sums ``sum_{j<k} inc_j`` along the ensemble, shape ``(P, N+1)``."""
    inc = ens.along(increments)
    out = np.zeros((inc.shape[0], inc.shape[1] + 1))
    np.cumsum(inc, axis=1, out=out[:, 1:])
    return out


def s_beta_cumulative(lattice: BrownianLattice, increments, beta: float,
                      ensemble: PathEnsemble | None = None) -> float:
    """``E[sup_t |K_t|^beta]`` for ``K`` given by its node increments."""
    ens = ensemble or ensemble_for(lattice)
    return ens.mean(np.max(np.abs(cumulative(_layers(increments), ens)), axis=1) ** beta)


def m_beta(lattice: BrownianLattice, Z, beta: float, ensemble: PathEnsemble | None = None) -> float:
    """``E[(sum_k |Z_k|^2 dt)^(beta/2)]``."""
    ens = ensemble or ensemble_for(lattice)
    z = ens.along(_layers(Z))
    sq = np.sum(z.reshape(z.shape[0], z.shape[1], -1) ** 2, axis=(1, 2)) * lattice.dt
    return ens.mean(sq ** (beta / 2.0))


def h1(lattice: BrownianLattice, p) -> float:
    """``E[sum_k |X_k| dt]`` over the first ``N`` layers, exactly."""
    layers = _layers(p)[: lattice.n_steps]
    return float(sum(lattice.expectation(np.abs(v), k) for k, v in enumerate(layers)) * lattice.dt)


def sup_cumulative(lattice: BrownianLattice, increments) -> float:
    """``max`` over all paths and times of ``|sum_{j<k} inc_j|``, exactly."""
    hi, lo = max_path_sum(lattice, _layers(increments))
    return max(hi, -lo)


def expected_total(lattice: BrownianLattice, increments) -> float:
    """``E[sum_k inc_k]`` (e.g. ``E[K_T]``), exactly."""
    return float(sum(lattice.expectation(v, k) for k, v in enumerate(_layers(increments))))
