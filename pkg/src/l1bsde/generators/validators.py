"""Sampling-based checks of the generator assumption classes.

A ``pass`` verdict means no violation was found on the probe set, nothing
more: probes are a scrambled Sobol sample of ``(t, x, y1, y2, z1, z2)``
plus adversarial corners (tiny and large ``|y|``, near-diagonal pairs down
to ``1e-12``).  A ``fail`` carries the worst probe as witness, and
:func:`recheck` re-evaluates it from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .spec import GeneratorSpec, norm

MODULUS_FLOOR = 1e-12


class MissingParameterError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_probes: int = 1024
    d: int = 1
    t_max: float = 1.0
    x_radius: float = 1.5
    y_radius: float = 4.0
    z_radius: float = 4.0
    seed: int = 0
    tol: float = 1e-9


@dataclass
class AssumptionReport:
    class_id: str
    verdict: str  # pass | fail | inconclusive
    worst_violation: float
    witness: dict | None
    samples: int
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _need(g: GeneratorSpec, *names):
    missing = [n for n in names if getattr(g, n) is None]
    if missing:
        raise MissingParameterError(f"generator {g.name!r} lacks parameter(s) {missing}")


def _osgood(g, t, x, y1, y2, z1, z2):
    _need(g, "rho")
    gap = np.maximum(np.abs(y1 - y2), MODULUS_FLOOR)
    lhs = (g(t, x, y1, z1) - g(t, x, y2, z1)) * np.sign(y1 - y2)
    return lhs, g.rho(gap)


def _zcont(g, t, x, y1, y2, z1, z2):
    _need(g, "phi")
    lhs = np.abs(g(t, x, y1, z1) - g(t, x, y1, z2))
    return lhs, g.phi(np.maximum(norm(z1 - z2), MODULUS_FLOOR))


def _h2ii(g, t, x, y1, y2, z1, z2):
    _need(g, "gamma", "f", "alpha")
    lhs = np.abs(g(t, x, y1, z1) - g(t, x, y1, np.zeros_like(z1)))
    return lhs, g.gamma * (g.f(t, x) + np.abs(y1) + norm(z1)) ** g.alpha


def _h2prime(g, t, x, y1, y2, z1, z2):
    _need(g, "f", "mu", "lam", "alpha")
    lhs = np.abs(g(t, x, y1, z1) - g(t, x, y1, np.zeros_like(z1)))
    return lhs, g.f(t, x) + g.mu * np.abs(y1) + g.lam * norm(z1) ** g.alpha


def _aa(g, t, x, y1, y2, z1, z2):
    _need(g, "f_tilde", "mu_tilde", "lam_tilde", "alpha_tilde")
    lhs = np.abs(g(t, x, y1, z1))
    return lhs, g.f_tilde(t, x) + g.mu_tilde * np.abs(y1) + g.lam_tilde * norm(z1) ** g.alpha_tilde


def _hh(g, t, x, y1, y2, z1, z2):
    _need(g, "f", "varphi", "lam", "alpha")
    lhs = np.abs(g(t, x, y1, z1))
    return lhs, g.f(t, x) + g.varphi(t, x, np.abs(y1)) + g.lam * norm(z1) ** g.alpha


def _h1iii(g, t, x, y1, y2, z1, z2):
    _need(g, "psi")
    zero = np.zeros_like(z1)
    lhs = np.abs(g(t, x, y1, zero) - g(t, x, np.zeros_like(y1), zero))
    return lhs, g.psi(t, x, np.abs(y1))


def _h1ii(g, t, x, y1, y2, z1, z2):
    # integrability of g(., 0, 0) reduces to finiteness on a finite grid
    zero = np.zeros_like(z1)
    v = np.abs(g(t, x, np.zeros_like(y1), zero))
    return np.where(np.isfinite(v), 0.0, np.inf), np.zeros_like(v)


INEQUALITIES: dict[str, Callable] = {
    "H1i": _osgood, "H1ii": _h1ii, "H1iii": _h1iii, "H2i": _zcont, "H2ii": _h2ii,
    "H2prime": _h2prime, "AA": _aa, "HH": _hh,
}


def _excess(lhs, rhs, tol):
    with np.errstate(invalid="ignore"):
        return lhs - rhs - tol * (1.0 + np.abs(rhs))


def _probes(cfg: SamplerConfig):
    d = cfg.d
    m = 2 + 3 * d
    n = max(1, int(np.ceil(np.log2(max(2, cfg.n_probes)))))
    u = qmc.Sobol(d=m, scramble=True, seed=cfg.seed).random_base2(n)
    t = u[:, 0] * cfg.t_max
    x = (2 * u[:, 1:1 + d] - 1) * cfg.x_radius
    y1 = (2 * u[:, 1 + d] - 1) * cfg.y_radius
    z1 = (2 * u[:, 2 + d:2 + 2 * d] - 1) * cfg.z_radius
    z2 = (2 * u[:, 2 + 2 * d:2 + 3 * d] - 1) * cfg.z_radius
    # y2: half independent, half a log-spaced neighbour of y1
    eps = np.geomspace(1e-12, 1.0, len(t)) * np.where(np.arange(len(t)) % 2, 1.0, -1.0)
    y2 = np.where(np.arange(len(t)) % 4 < 2, (2 * u[:, 0][::-1] - 1) * cfg.y_radius, y1 + eps)
    # z2 near z1 for a quarter of the probes
    near = (np.arange(len(t)) % 4 == 3)[:, None]
    z2 = np.where(near, z1 + eps[:, None] * cfg.z_radius / 4, z2)

    # adversarial corners
    ys = np.array([0.0, 1e-12, -1e-12, 0.01, -0.01, 0.05, -0.05, 0.5, -0.5, 1.0, -1.0,
                   cfg.y_radius, -cfg.y_radius])
    zs = [np.zeros(d), np.full(d, 1e-6), np.full(d, cfg.z_radius / np.sqrt(d)), np.full(d, -1.0)]
    ts = np.array([cfg.t_max, cfg.t_max / 2])
    xs = [np.zeros(d), np.full(d, cfg.x_radius / np.sqrt(d))]
    rows = []
    for a in ys:
        for b in ys:
            for zz in zs[:2]:
                rows.append((ts[0], xs[0], a, b, zz, zs[2]))
    for a in ys:
        for zz1 in zs:
            for zz2 in zs:
                for tt in ts:
                    for xx in xs:
                        rows.append((tt, xx, a, -a / 3, zz1, zz2))
    tc = np.array([r[0] for r in rows])
    xc = np.array([r[1] for r in rows])
    y1c = np.array([r[2] for r in rows])
    y2c = np.array([r[3] for r in rows])
    z1c = np.array([r[4] for r in rows])
    z2c = np.array([r[5] for r in rows])
    return (np.concatenate([t, tc]), np.concatenate([x, xc]), np.concatenate([y1, y1c]),
            np.concatenate([y2, y2c]), np.concatenate([z1, z1c]), np.concatenate([z2, z2c]))


def check(g: GeneratorSpec, class_id: str, cfg: SamplerConfig | None = None) -> AssumptionReport:
    cfg = cfg or SamplerConfig()
    if class_id not in INEQUALITIES:
        raise ValueError(f"no validator for class {class_id!r}")
    t, x, y1, y2, z1, z2 = _probes(cfg)
    with np.errstate(all="ignore"):
        lhs, rhs = INEQUALITIES[class_id](g, t, x, y1, y2, z1, z2)
        ex = _excess(np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float), cfg.tol)
    ex = np.broadcast_to(ex, t.shape)
    finite = np.isfinite(ex) | (ex == np.inf)
    notes = list(g.flags)
    n_bad = int(np.sum(~finite))
    if n_bad:
        notes.append(f"{n_bad} probe(s) gave non-finite values and were skipped")
    ex_f = np.where(finite, ex, -np.inf)
    i = int(np.argmax(ex_f))
    worst = float(ex_f[i])
    witness = {"t": float(t[i]), "x": x[i].tolist(), "y1": float(y1[i]), "y2": float(y2[i]),
               "z1": z1[i].tolist(), "z2": z2[i].tolist()}
    if worst > 0:
        verdict = "fail"
    elif n_bad:
        verdict = "inconclusive"
    else:
        verdict = "pass"
    return AssumptionReport(class_id, verdict, max(worst, 0.0) if verdict == "fail" else 0.0,
                            witness if verdict == "fail" else None, len(t), notes)


def recheck(report: AssumptionReport, g: GeneratorSpec, tol: float = 1e-9) -> float:
    """Excess of the defining inequality at the report's witness (positive = violated)."""
    if report.witness is None:
        raise ValueError("report has no witness")
    w = report.witness
    as1 = lambda v: np.asarray([v], dtype=float)  # noqa: E731
    args = (as1(w["t"]), np.asarray([w["x"]], dtype=float), as1(w["y1"]), as1(w["y2"]),
            np.asarray([w["z1"]], dtype=float), np.asarray([w["z2"]], dtype=float))
    with np.errstate(all="ignore"):
        lhs, rhs = INEQUALITIES[report.class_id](g, *args)
    return float(np.ravel(_excess(np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float), tol))[0])


def check_one_sided_osgood(g, cfg=None):
    return check(g, "H1i", cfg)


def check_z_uniform_continuity(g, cfg=None):
    return check(g, "H2i", cfg)


def check_sublinear_z_growth(g, variant: str = "H2ii", cfg=None):
    if variant not in ("H2ii", "H2prime", "AA"):
        raise ValueError("variant must be one of H2ii, H2prime, AA")
    return check(g, variant, cfg)


def check_moduli(g: GeneratorSpec, x_max: float = 100.0, n: int = 4001) -> list[str]:
    """Problems with the declared moduli on a sampled grid (empty list = fine)."""
    x = np.concatenate([[0.0], np.geomspace(MODULUS_FLOOR, x_max, n)])
    problems = []
    for label, fn, concave in (("rho", g.rho, True), ("phi", g.phi, False)):
        if fn is None:
            continue
        v = np.asarray(fn(x), dtype=float)
        if abs(v[0]) > 1e-12:
            problems.append(f"{label}(0) = {v[0]} != 0")
        if np.any(np.diff(v) < -1e-12 * (1 + np.abs(v[1:]))):
            problems.append(f"{label} is not nondecreasing")
        if concave:
            # chord test on consecutive triples of the (non-uniform) grid
            x0, x1, x2 = x[:-2], x[1:-1], x[2:]
            lam = (x1 - x0) / (x2 - x0)
            chord = (1 - lam) * v[:-2] + lam * v[2:]
            if np.any(v[1:-1] < chord - 1e-9 * (1 + np.abs(chord))):
                problems.append(f"{label} is not concave")
    if g.growth_constant is not None and g.rho is not None:
        if np.any(np.asarray(g.rho(x)) > g.growth_constant * (x + 1) * (1 + 1e-9) + 1e-12):
            problems.append("rho exceeds A (x + 1)")
    return problems


def validate(g: GeneratorSpec, cfg: SamplerConfig | None = None) -> list[AssumptionReport]:
    """Run the validator of every declared class that has one."""
    return [check(g, c, cfg) for c in sorted(g.classes) if c in INEQUALITIES]
