"""Named example generators with their declared assumption data.

Five drivers: ``ex7.1``; ``ex7.2.g1``/``ex7.2.g2``; ``ex7.3.g1``/``ex7.3.g2``.
The two split examples are meant to be used as ``g = g1 + g2`` with ``g1``
convolved in ``z`` and ``g2`` jointly in ``(y, z)``.

The moduli are built on the non-Lipschitz functions ``h(x) = -x ln x`` and
``hbar(x) = x |ln x| ln|ln x|`` near zero, continued linearly beyond the
cut-off ``DELTA``; the cut-off must keep both nondecreasing and concave on
``(0, DELTA]`` (``hbar`` needs ``DELTA < exp(-e)``).
"""

from __future__ import annotations

import math

import numpy as np

from .spec import GeneratorSpec, linear_growth_constant, norm

DELTA = 0.05


def _h_core(x):
    return -x * np.log(x)


def _h_prime(x):
    return -np.log(x) - 1.0


def _hbar_core(x):
    u = -np.log(x)
    return x * u * np.log(u)


def _hbar_prime(x):
    u = -np.log(x)
    return u * np.log(u) - np.log(u) - 1.0


def _piecewise(core, slope, delta):
    h_delta = float(core(delta))
    s_delta = float(slope(delta))

    def h(x):
        x = np.asarray(x, dtype=float)
        safe = np.clip(x, 1e-300, delta)
        with np.errstate(all="ignore"):
            inner = core(safe)
        return np.where(x > delta, s_delta * (x - delta) + h_delta, np.where(x > 0, inner, 0.0))

    return h, h_delta, s_delta


h, H_DELTA, H_SLOPE = _piecewise(_h_core, _h_prime, DELTA)
hbar, HBAR_DELTA, HBAR_SLOPE = _piecewise(_hbar_core, _hbar_prime, DELTA)


def _tpow(t, p):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, np.abs(t) ** (-p), 0.0)


def _absB(x):
    return norm(x)


def _ex71(t, x, y, z):
    y = np.asarray(y, dtype=float)
    az = norm(z)
    b2 = _absB(x) ** 2
    with np.errstate(over="ignore"):
        return (h(np.abs(y)) + np.exp(-y * b2) + np.minimum(np.exp(-y), 1.0) * (np.sqrt(az) + np.cbrt(az))
                + _tpow(t, 0.5))


def _ex72_g1(t, x, y, z):
    y = np.asarray(y, dtype=float)
    az = norm(z)
    with np.errstate(over="ignore", invalid="ignore"):
        return (h(np.abs(y)) - y**3 * np.exp(_absB(x) ** 4) - np.exp(y) * np.sin(az) ** 2
                + np.sqrt(az) * np.cos(az) + _tpow(t, 1.0 / 3.0))


def _ex72_g2(t, x, y, z):
    y = np.asarray(y, dtype=float)
    az = norm(z)
    return np.cbrt(np.abs(y)) + y * np.cos(y) + (np.abs(y) * az) ** 0.25 + _absB(x)


def _ex73_g1(t, x, y, z):
    y = np.asarray(y, dtype=float)
    az = norm(z)
    with np.errstate(over="ignore"):
        return (hbar(np.abs(y)) - np.exp(y * _absB(x) ** 3)
                + np.minimum(np.exp(-y), 1.0) * np.sqrt(az) * np.cos(az) + _tpow(t, 0.25))


def _ex73_g2(t, x, y, z):
    y = np.asarray(y, dtype=float)
    az = norm(z)
    return y * np.cos(az) + np.cbrt(az) * np.sin(y) + np.sqrt(1.0 + np.abs(y) + az) + _absB(x) ** 2


def _ones(t, x):
    return np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))


def _zeros(t, x):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))


def _build() -> dict[str, GeneratorSpec]:
    A_h = linear_growth_constant(h)
    A_hbar = linear_growth_constant(hbar)

    def phi71(u):
        u = np.abs(np.asarray(u, dtype=float))
        return np.sqrt(u) + np.cbrt(u)

    def psi71(t, x, r):
        with np.errstate(over="ignore"):
            return H_DELTA + H_SLOPE * r + np.exp(r * _absB(x) ** 2) + 1.0

    def psi73(t, x, r):
        with np.errstate(over="ignore"):
            return HBAR_DELTA + HBAR_SLOPE * r + np.exp(r * _absB(x) ** 3) + 1.0

    def f72(t, x):
        return 1.0 + _tpow(t, 1.0 / 3.0) + H_DELTA + _zeros(t, x)

    def varphi72(t, x, r):
        with np.errstate(over="ignore"):
            return H_SLOPE * r + r**3 * np.exp(_absB(x) ** 4) + np.expm1(r)

    entries = [
        GeneratorSpec(_ex71, name="ex7.1", classes={"H1", "H2"}, rho=h, phi=phi71, gamma=2.0,
                      alpha=0.5, f=_ones, psi=psi71, growth_constant=A_h,
                      description="h(|y|) + exp(-y|B|^2) + min(exp(-y),1)(sqrt|z| + cbrt|z|) + t^(-1/2)"),
        GeneratorSpec(_ex72_g1, name="ex7.2.g1", classes={"H1i", "HH"}, rho=h, f=f72,
                      varphi=varphi72, lam=1.0, alpha=0.5, growth_constant=A_h,
                      description="h(|y|) - y^3 exp(|B|^4) - exp(y) sin^2|z| + sqrt|z| cos|z| + t^(-1/3)"),
        GeneratorSpec(_ex72_g2, name="ex7.2.g2", classes={"AA"},
                      f_tilde=lambda t, x: _absB(x) + 2.0 + _zeros(t, x), mu_tilde=3.0, lam_tilde=1.0,
                      alpha_tilde=0.5,
                      description="cbrt|y| + y cos y + (|y||z|)^(1/4) + |B|"),
        GeneratorSpec(_ex73_g1, name="ex7.3.g1", classes={"H1", "H2prime"}, rho=hbar, psi=psi73,
                      f=_zeros, mu=0.0, lam=1.0, alpha=0.5, growth_constant=A_hbar,
                      description="hbar(|y|) - exp(y|B|^3) + min(exp(-y),1) sqrt|z| cos|z| + t^(-1/4)"),
        GeneratorSpec(_ex73_g2, name="ex7.3.g2", classes={"AA"},
                      f_tilde=lambda t, x: _absB(x) ** 2 + 2.0 + _zeros(t, x), mu_tilde=2.0,
                      lam_tilde=2.0, alpha_tilde=0.5,
                      description="y cos|z| + cbrt|z| sin y + sqrt(1+|y|+|z|) + |B|^2"),
    ]
    return {g.name: g for g in entries}


_CATALOG = _build()

# generators that are meant to be combined as g1 + g2
SPLITS = {"ex7.2": ("ex7.2.g1", "ex7.2.g2"), "ex7.3": ("ex7.3.g1", "ex7.3.g2")}


def catalog(filter: str = "") -> list[GeneratorSpec]:
    """Catalog entries whose id contains ``filter`` (all when empty)."""
    return [g for name, g in _CATALOG.items() if filter in name]


def get(name: str) -> GeneratorSpec:
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog id {name!r}; known: {sorted(_CATALOG)}") from None


def describe(g: GeneratorSpec) -> dict:
    params = {}
    for key in ("gamma", "alpha", "mu", "lam", "mu_tilde", "lam_tilde", "alpha_tilde", "growth_constant"):
        v = getattr(g, key)
        if v is not None:
            params[key] = round(float(v), 6) if math.isfinite(v) else v
    return {"id": g.name, "classes": sorted(g.classes), "parameters": params, "formula": g.description}
