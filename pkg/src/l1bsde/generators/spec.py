"""Generator (driver) representation and penalization transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..lattice import NodeProcess

# canonical assumption-class ids; "H1"/"H2" are shorthands for their parts
CLASS_IDS = ("H1i", "H1ii", "H1iii", "H2i", "H2ii", "H2prime", "HH", "AA")
_SHORTHAND = {"H1": ("H1i", "H1ii", "H1iii"), "H2": ("H2i", "H2ii")}


def expand_classes(classes) -> frozenset:
    out = set()
    for c in classes:
        if c in _SHORTHAND:
            out.update(_SHORTHAND[c])
        elif c in CLASS_IDS:
            out.add(c)
        else:
            raise ValueError(f"unknown assumption class {c!r}; known: {CLASS_IDS + tuple(_SHORTHAND)}")
    return frozenset(out)


def norm(v) -> np.ndarray:
    """Euclidean norm over the last axis."""
    return np.sqrt(np.sum(np.square(v), axis=-1))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """An evaluatable driver ``g(t, x, y, z)`` plus its declared assumption data.

    ``x`` is the Brownian state with shape ``(..., d)``, ``z`` has shape
    ``(..., d)``, and ``t``, ``y`` broadcast against the leading axes.  The
    function must be vectorised and pure.

    Parameters follow the assumption classes: ``rho`` (one-sided Osgood
    modulus), ``phi`` (z-continuity modulus), ``gamma``/``alpha``/``f``
    (stronger sub-linear growth), ``mu``/``lam`` (sub-linear growth),
    ``varphi`` (general growth envelope ``varphi(t, x, r)``), ``psi``
    (``sup_{|y|<=r} |g(y,0)-g(0,0)|`` envelope), the tilde family for the
    linear-growth class, and ``growth_constant``, the constant ``A`` with
    ``rho(x) <= A (x + 1)`` that the implicit solvers use for their
    step-size check.
    """

    func: Callable
    name: str = "g"
    classes: frozenset = frozenset()
    rho: Optional[Callable] = None
    phi: Optional[Callable] = None
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    f: Optional[Callable] = None
    mu: Optional[float] = None
    lam: Optional[float] = None
    psi: Optional[Callable] = None
    varphi: Optional[Callable] = None
    f_tilde: Optional[Callable] = None
    mu_tilde: Optional[float] = None
    lam_tilde: Optional[float] = None
    alpha_tilde: Optional[float] = None
    growth_constant: Optional[float] = None
    # largest slope of y -> -g(y) the Picard iteration has to absorb; a hint only
    stiffness: float = 0.0
    description: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", expand_classes(self.classes))
        for a in (self.alpha, self.alpha_tilde):
            if a is not None and not 0 < a <= 1:
                raise ValueError(f"Hoelder exponent must lie in (0, 1], got {a}")

    def __call__(self, t, x, y, z) -> np.ndarray:
        return self.func(t, x, y, z)

    def declares(self, cls: str) -> bool:
        return expand_classes([cls]) <= self.classes

    @property
    def flags(self) -> list[str]:
        """Warnings about parameters outside the strict assumption ranges."""
        out = []
        if self.alpha == 1 or self.alpha_tilde == 1:
            out.append("alpha=1 admitted for testing only (strict range is (0,1))")
        return out

    def with_(self, **changes) -> "GeneratorSpec":
        return replace(self, **changes)


def zero_generator() -> GeneratorSpec:
    return GeneratorSpec(lambda t, x, y, z: np.zeros(np.broadcast_shapes(np.shape(y), np.shape(t), np.shape(z)[:-1])),
                         name="zero", classes={"H1", "H2"}, rho=lambda u: np.zeros_like(u),
                         phi=lambda u: np.zeros_like(u), gamma=0.0, alpha=0.5,
                         f=lambda t, x: np.zeros(np.shape(x)[:-1]), growth_constant=0.0)


def linear_generator(a: float = 0.0, b=0.0, c: float = 0.0, name: str | None = None) -> GeneratorSpec:
    """``g = a*y + b.z + c``; Lipschitz with constants ``|a|`` and ``|b|``."""
    b_arr = np.atleast_1d(np.asarray(b, dtype=float))

    def func(t, x, y, z):
        return a * np.asarray(y, dtype=float) + np.sum(b_arr * np.asarray(z, dtype=float), axis=-1) + c

    lip_y = abs(a)
    return GeneratorSpec(func, name=name or f"linear(a={a},b={b},c={c})",
                         classes={"H1i"}, rho=lambda u: lip_y * np.asarray(u, dtype=float),
                         phi=lambda u: float(np.sqrt(np.sum(b_arr**2))) * np.asarray(u, dtype=float),
                         growth_constant=max(lip_y, 0.0), stiffness=lip_y)


def _barrier_absent(barrier) -> bool:
    return barrier is None or (isinstance(barrier, NodeProcess) and barrier.is_sentinel)


def penalize_lower(g: GeneratorSpec, L, n: float) -> GeneratorSpec:
    """``g + n (y - L)^-``; ``L`` is a node process or a callable of ``(t, x)``."""
    if n < 0:
        raise ValueError("penalty level must be nonnegative")
    if n == 0 or _barrier_absent(L):
        return g

    def func(t, x, y, z):
        return g.func(t, x, y, z) + n * np.maximum(L(t, x) - y, 0.0)

    return g.with_(func=func, name=f"{g.name}+{n}(y-L)^-", stiffness=g.stiffness + n)


def penalize_upper(g: GeneratorSpec, U, n: float) -> GeneratorSpec:
    """``g - n (y - U)^+``."""
    if n < 0:
        raise ValueError("penalty level must be nonnegative")
    if n == 0 or _barrier_absent(U):
        return g

    def func(t, x, y, z):
        return g.func(t, x, y, z) - n * np.maximum(y - U(t, x), 0.0)

    return g.with_(func=func, name=f"{g.name}-{n}(y-U)^+", stiffness=g.stiffness + n)


class CrossedBarriersError(ValueError):
    pass


def penalize_double(g: GeneratorSpec, L, U, n: float) -> GeneratorSpec:
    """``g + n (y - L)^- - n (y - U)^+``; equals ``g`` on ``[L, U]``."""
    if isinstance(L, NodeProcess) and isinstance(U, NodeProcess) and not (L.is_sentinel or U.is_sentinel):
        for k in range(min(len(L), len(U))):
            bad = L[k] > U[k]
            if np.any(bad):
                node = tuple(int(i) for i in np.argwhere(bad)[0])
                raise CrossedBarriersError(f"L > U at step {k}, node {node}")
    if _barrier_absent(L):
        return penalize_upper(g, U, n)
    if _barrier_absent(U):
        return penalize_lower(g, L, n)
    if n < 0:
        raise ValueError("penalty level must be nonnegative")
    if n == 0:
        return g

    def func(t, x, y, z):
        return (g.func(t, x, y, z) + n * np.maximum(L(t, x) - y, 0.0)
                - n * np.maximum(y - U(t, x), 0.0))

    return g.with_(func=func, name=f"{g.name}+{n}(y-L)^- -{n}(y-U)^+", stiffness=g.stiffness + n)


def add(g1: GeneratorSpec, g2: GeneratorSpec, name: str | None = None) -> GeneratorSpec:
    """Pointwise sum; declared classes are not inherited."""
    def func(t, x, y, z):
        return g1.func(t, x, y, z) + g2.func(t, x, y, z)

    A = None
    if g1.growth_constant is not None and g2.growth_constant is not None:
        A = g1.growth_constant + g2.growth_constant
    return GeneratorSpec(func, name=name or f"{g1.name}+{g2.name}", growth_constant=A,
                         stiffness=g1.stiffness + g2.stiffness)


def shift(g: GeneratorSpec, c: float) -> GeneratorSpec:
    """``g + c``; keeps every declared class."""
    return g.with_(func=lambda t, x, y, z: g.func(t, x, y, z) + c, name=f"{g.name}{c:+g}")


def linear_growth_constant(modulus: Callable, x_max: float = 1e4, n: int = 20001) -> float:
    """Smallest A with ``modulus(x) <= A (x + 1)`` on a sampled grid of [0, x_max]."""
    x = np.concatenate([[0.0], np.geomspace(1e-12, x_max, n)])
    with np.errstate(all="ignore"):
        r = np.asarray(modulus(x), dtype=float) / (x + 1.0)
    return float(np.nanmax(r)) if r.size else math.nan
