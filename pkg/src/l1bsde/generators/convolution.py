"""Inf- and sup-convolution regularisation of generators.

``inf_convolve_z`` computes ``inf_u [g(t,x,y,u) + c |u - z|^alpha]`` with
``c = n + 2*lam``; ``inf_convolve_yz`` computes
``inf_{u,v} [g(t,x,u,v) + c1 |u - y| + c2 |v - z|^alpha]`` with
``c1 = n + 2*mu``, ``c2 = n + 2*lam``.  ``kind="sup"`` gives the mirror
operation (``sup`` and ``-c``).

The minimisation runs over a bounded box around the probe.  When the
generator declares a growth bound, the half-width is the smallest radius
beyond which the bracket provably exceeds its value at the probe; otherwise
the radius is doubled until the bracket at the box edge does.  The box is
searched on a uniform grid, the best grid point is refined by golden-section
search along each axis, and the probe itself is always a candidate, so the
result never exceeds ``g`` (``inf``) nor falls below it (``sup``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spec import GeneratorSpec, norm

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SearchConfig:
    points: int = 2**9 + 1
    joint_points: int = 2**7 + 1
    radius: float | None = None
    max_radius: float = 1e4
    refine: bool = True
    golden_iters: int = 60
    chunk_elements: int = 2**22


class SearchDomainError(ValueError):
    pass


def _flatten(t, x, y, z):
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(np.shape(t), np.shape(y), z.shape[:-1], x.shape[:-1])
    P = int(np.prod(shape)) if shape else 1
    tb = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(P)
    yb = np.broadcast_to(np.asarray(y, dtype=float), shape).reshape(P)
    zb = np.broadcast_to(z, shape + z.shape[-1:]).reshape(P, z.shape[-1])
    xb = np.broadcast_to(x, shape + x.shape[-1:]).reshape(P, x.shape[-1])
    return shape, tb, xb, yb, zb


def _growth_bound(g: GeneratorSpec, t, x, y, z, alpha):
    """``(D, lam)`` with ``g(y,u) - g(y,z) >= -D - lam |u-z|^alpha`` for all u."""
    absz = norm(z)
    if g.declares("H2prime") and None not in (g.f, g.mu, g.lam, g.alpha):
        a, lam = g.alpha, g.lam
        D = 2.0 * (g.f(t, x) + g.mu * np.abs(y)) + 2.0 * lam * absz**a
    elif g.declares("H2ii") and None not in (g.f, g.gamma, g.alpha):
        a, lam = g.alpha, g.gamma
        D = 2.0 * g.gamma * (g.f(t, x) + np.abs(y)) ** a + 2.0 * lam * absz**a
    elif g.declares("HH") and None not in (g.f, g.varphi, g.lam, g.alpha):
        a, lam = g.alpha, g.lam
        D = 2.0 * (g.f(t, x) + g.varphi(t, x, np.abs(y))) + 2.0 * lam * absz**a
    else:
        return None
    if a > alpha:
        return None
    if a < alpha:
        D = D + lam  # |w|^a <= 1 + |w|^alpha
    return np.asarray(D, dtype=float), float(lam)


def _growth_bound_yz(g: GeneratorSpec, t, x, y, z, alpha):
    """``(D, mu, lam)`` for the linear-growth class, same meaning as above."""
    if not (g.declares("AA") and None not in (g.f_tilde, g.mu_tilde, g.lam_tilde, g.alpha_tilde)):
        return None
    a, mu, lam = g.alpha_tilde, g.mu_tilde, g.lam_tilde
    if a > alpha:
        return None
    D = 2.0 * (g.f_tilde(t, x) + mu * np.abs(y) + lam * norm(z) ** a)
    if a < alpha:
        D = D + lam
    return np.asarray(D, dtype=float), float(mu), float(lam)


def _doubling_radius(bracket_at_edge, base, P, max_radius):
    """Smallest power-of-two radius whose box edge already exceeds ``base``."""
    R = np.ones(P)
    todo = np.ones(P, dtype=bool)
    while np.any(todo):
        with np.errstate(all="ignore"):
            edge = bracket_at_edge(R)
        grow = todo & (edge < base) & (R < max_radius)
        R = np.where(grow, np.minimum(2.0 * R, max_radius), R)
        todo = grow
    return R


def _golden(fun, a, b, iters):
    """Vectorised golden-section minimisation on ``[a, b]``; returns ``(argmin, min)``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - _GOLDEN * (b - a), d)
        d_new = np.where(left, c, a + _GOLDEN * (b - a))
        f_new = fun(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    take_c = fc <= fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd)


def _minimise(bracket, centre, radius, points, refine, iters, chunk):
    """Grid + golden minimisation of ``bracket(w)`` over the box ``centre ± radius``.

    ``bracket`` maps candidates of shape ``(P, G, m)`` to values ``(P, G)``;
    ``centre`` is ``(P, m)`` and ``radius`` ``(P, m)``.
    """
    P, m = centre.shape
    s = np.linspace(-1.0, 1.0, points)
    offsets = np.stack(np.meshgrid(*([s] * m), indexing="ij"), axis=-1).reshape(-1, m)
    best_w = centre.copy()
    best_v = bracket(centre[:, None, :])[:, 0]
    step = max(1, chunk // max(1, offsets.shape[0]))
    for lo in range(0, P, step):
        sl = slice(lo, min(P, lo + step))
        cand = centre[sl, None, :] + radius[sl, None, :] * offsets[None, :, :]
        with np.errstate(all="ignore"):
            vals = bracket(cand, sl)
        vals = np.where(np.isnan(vals), np.inf, vals)
        i = np.argmin(vals, axis=1)
        v = vals[np.arange(vals.shape[0]), i]
        better = v < best_v[sl]
        best_v[sl] = np.where(better, v, best_v[sl])
        best_w[sl] = np.where(better[:, None], cand[np.arange(cand.shape[0]), i], best_w[sl])
    if refine and points > 1:
        h = radius * (2.0 / (points - 1))
        for axis in range(m):
            def along(u, axis=axis):
                w = best_w.copy()
                w[:, axis] = u
                with np.errstate(all="ignore"):
                    out = bracket(w[:, None, :])[:, 0]
                return np.where(np.isnan(out), np.inf, out)

            arg, val = _golden(along, best_w[:, axis] - h[:, axis], best_w[:, axis] + h[:, axis], iters)
            better = val < best_v
            best_v = np.where(better, val, best_v)
            best_w[:, axis] = np.where(better, arg, best_w[:, axis])
    return best_v


def inf_convolve_z(g: GeneratorSpec, n: float, lam: float, alpha: float,
                   search: SearchConfig | None = None, kind: str = "inf") -> GeneratorSpec:
    """z-regularisation ``inf_u [g(y,u) + (n + 2 lam)|u - z|^alpha]`` (``kind='sup'`` mirrors)."""
    search = search or SearchConfig()
    if kind not in ("inf", "sup"):
        raise ValueError("kind must be 'inf' or 'sup'")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if search.points < 1:
        raise SearchDomainError("search grid is empty")
    sgn = 1.0 if kind == "inf" else -1.0
    c = float(n) + 2.0 * float(lam)
    if c <= 0:
        raise SearchDomainError("penalty constant n + 2*lam must be positive")

    def func(t, x, y, z):
        shape, tb, xb, yb, zb = _flatten(t, x, y, z)
        P, d = zb.shape

        def h(tt, xx, yy, uu):
            return sgn * g.func(tt, xx, yy, uu)

        base = h(tb, xb, yb, zb)
        if search.radius is not None:
            R = np.full(P, float(search.radius))
        else:
            bound = _growth_bound(g, tb, xb, yb, zb, alpha)
            if bound is not None and c > bound[1]:
                D, lam_g = bound
                R = (np.maximum(D, 0.0) / (c - lam_g)) ** (1.0 / alpha)
            else:
                def edge(R):
                    worst = np.full(P, np.inf)
                    for i in range(d):
                        for s in (-1.0, 1.0):
                            u = zb.copy()
                            u[:, i] += s * R
                            worst = np.minimum(worst, h(tb, xb, yb, u) + c * R**alpha)
                    return worst

                R = _doubling_radius(edge, base, P, search.max_radius)
            R = np.clip(R, 1e-12, search.max_radius)

        def bracket(cand, sl=slice(None)):
            tt, xx, yy, zz = tb[sl, None], xb[sl, None, :], yb[sl, None], zb[sl, None, :]
            return h(tt, xx, yy, cand) + c * norm(cand - zz) ** alpha

        val = _minimise(bracket, zb, np.repeat(R[:, None], d, axis=1), search.points,
                        search.refine, search.golden_iters, search.chunk_elements)
        val = np.minimum(val, base)
        return (sgn * val).reshape(shape)

    return GeneratorSpec(
        func, name=f"{kind}_z[{g.name}](n={n})",
        classes=(g.classes & {"H1i", "H1ii", "H1iii"}) | {"H2i", "H2ii"},
        rho=g.rho, phi=lambda u: c * np.asarray(u, dtype=float) ** alpha, gamma=c, alpha=alpha,
        f=lambda t, x: np.zeros(np.shape(x)[:-1]), psi=g.psi,
        growth_constant=g.growth_constant, stiffness=g.stiffness,
    )


def inf_convolve_yz(g: GeneratorSpec, n: float, mu: float, lam: float, alpha: float,
                    search: SearchConfig | None = None, kind: str = "inf") -> GeneratorSpec:
    """Joint regularisation ``inf_{u,v} [g(u,v) + (n+2mu)|u-y| + (n+2lam)|v-z|^alpha]``."""
    search = search or SearchConfig()
    if kind not in ("inf", "sup"):
        raise ValueError("kind must be 'inf' or 'sup'")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if search.joint_points < 1:
        raise SearchDomainError("search grid is empty")
    sgn = 1.0 if kind == "inf" else -1.0
    c1 = float(n) + 2.0 * float(mu)
    c2 = float(n) + 2.0 * float(lam)
    if c1 <= 0 or c2 <= 0:
        raise SearchDomainError("penalty constants must be positive")

    def func(t, x, y, z):
        shape, tb, xb, yb, zb = _flatten(t, x, y, z)
        P, d = zb.shape

        def h(tt, xx, uu, vv):
            return sgn * g.func(tt, xx, uu, vv)

        base = h(tb, xb, yb, zb)
        if search.radius is not None:
            Ry = np.full(P, float(search.radius))
            Rz = np.full(P, float(search.radius))
        else:
            bound = _growth_bound_yz(g, tb, xb, yb, zb, alpha)
            if bound is not None and c1 > bound[1] and c2 > bound[2]:
                D, mu_g, lam_g = bound
                D = np.maximum(D, 0.0)
                Ry = D / (c1 - mu_g)
                Rz = (D / (c2 - lam_g)) ** (1.0 / alpha)
            else:
                def edge(R):
                    worst = np.full(P, np.inf)
                    for s in (-1.0, 1.0):
                        worst = np.minimum(worst, h(tb, xb, yb + s * R, zb) + c1 * R)
                    for i in range(d):
                        for s in (-1.0, 1.0):
                            v = zb.copy()
                            v[:, i] += s * R
                            worst = np.minimum(worst, h(tb, xb, yb, v) + c2 * R**alpha)
                    return worst

                Ry = Rz = _doubling_radius(edge, base, P, search.max_radius)
            Ry = np.clip(Ry, 1e-12, search.max_radius)
            Rz = np.clip(Rz, 1e-12, search.max_radius)

        centre = np.concatenate([yb[:, None], zb], axis=1)
        radius = np.concatenate([Ry[:, None], np.repeat(Rz[:, None], d, axis=1)], axis=1)

        def bracket(cand, sl=slice(None)):
            tt, xx = tb[sl, None], xb[sl, None, :]
            u, v = cand[..., 0], cand[..., 1:]
            return (h(tt, xx, u, v) + c1 * np.abs(u - yb[sl, None])
                    + c2 * norm(v - zb[sl, None, :]) ** alpha)

        val = _minimise(bracket, centre, radius, search.joint_points, search.refine,
                        search.golden_iters, search.chunk_elements)
        val = np.minimum(val, base)
        return (sgn * val).reshape(shape)

    return GeneratorSpec(
        func, name=f"{kind}_yz[{g.name}](n={n})", classes={"H1i", "H2i", "H2ii"},
        rho=lambda u: c1 * np.asarray(u, dtype=float),
        phi=lambda u: c2 * np.asarray(u, dtype=float) ** alpha, gamma=c2, alpha=alpha,
        f=lambda t, x: np.zeros(np.shape(x)[:-1]),
        # one-sided slope in y is only bounded by c1, which grows with n;
        # no step-size guarantee is claimed, the bracketed solve handles it
        growth_constant=None, stiffness=c1,
    )
