"""Acceptance suites run by ``l1bsde verify``.

Each criterion measures its quantities and compares them with fixed
thresholds; the result carries the measured values so a failing criterion
reports by how much it missed.
"""

from __future__ import annotations

import copy
import io
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np
import yaml

from . import analysis
from .bsde import solve_bsde, solve_bsde_mc
from .generators.convolution import inf_convolve_z
from .generators.spec import GeneratorSpec, linear_generator, zero_generator
from .lattice import NodeProcess, TimeGrid, build_lattice, sample_paths
from .manifest import from_dict
from .reflected import (
    VARIANTS,
    BarrierPair,
    dynkin_oracle,
    flat_off_report,
    penalization_ladder_lower,
    penalization_ladder_mixed,
    snell_oracle,
    solve_drbsde,
)
from .runner import Progress, execute


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    failed_parts: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        miss = f" [missed: {', '.join(self.failed_parts)}]" if self.failed_parts else ""
        return f"{'PASS' if self.passed else 'FAIL'} {self.number:>2} {self.name}: {vals}{miss}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


class _Parts:
    """Collects named sub-checks of one criterion."""

    def __init__(self):
        self.measured: dict = {}
        self.failed: list[str] = []

    def check(self, name: str, ok: bool, **values) -> None:
        self.measured.update(values)
        if not ok:
            self.failed.append(name)


# shared instances -----------------------------------------------------------------------

def snell_instance(n_steps: int = 32):
    """``xi = B_T^2`` and ``L = 1/2`` before the horizon, ``min(1/2, xi)`` at it."""
    lat = build_lattice(TimeGrid(1.0, n_steps), 1)
    xi = lat.states(n_steps)[..., 0] ** 2
    layers = [np.full(lat.shape(k), 0.5) for k in range(n_steps)] + [np.minimum(0.5, xi)]
    return lat, xi, NodeProcess(lat, tuple(layers), name="L")


def bounded_instance(n_steps: int = 32):
    """Barriers ``L = clip(B,-1,1)/2``, ``U = L + 1/4`` and ``xi = L_T + 0.1``."""
    lat = build_lattice(TimeGrid(1.0, n_steps), 1)
    L = NodeProcess.from_function(lat, lambda t, x: 0.5 * np.clip(x[..., 0], -1.0, 1.0), name="L")
    U = L.map(lambda v: v + 0.25)
    return lat, L[n_steps] + 0.1, L, U


def cubic_driver() -> GeneratorSpec:
    return GeneratorSpec(lambda t, x, y, z: 1.0 - np.asarray(y) ** 3, name="1-y^3", growth_constant=0.0)


def _max_gap(a, b) -> float:
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


# criteria --------------------------------------------------------------------------------

def martingale_exactness(parts: _Parts, ctx: dict) -> None:
    g = zero_generator()
    worst = 0.0
    for N in (1, 2, 3, 7, 64, 512):
        lat = build_lattice(TimeGrid(1.0, N), 1)
        worst = max(worst, abs(solve_bsde(lat, lambda t, x: x[..., 0] ** 2, g).y0 - 1.0))
    lat = build_lattice(TimeGrid(1.0, 512), 1)
    t0 = time.perf_counter()
    solve_bsde(lat, lambda t, x: x[..., 0] ** 2, g)
    dt = time.perf_counter() - t0
    parts.check("y0_error", worst <= 1e-12, y0_error=worst)
    parts.check("runtime", dt < 1.0, runtime_512=dt)


def linear_closed_form(parts: _Parts, ctx: dict) -> None:
    g = linear_generator(0.5)
    errs = {}
    for N in (512, 1024):
        lat = build_lattice(TimeGrid(1.0, N), 1)
        errs[N] = abs(solve_bsde(lat, 1.0, g).y0 - math.exp(0.5))
    ratio = errs[512] / errs[1024]
    parts.check("error_512", errs[512] <= 5e-3, error_512=errs[512])
    parts.check("ratio", 1.7 <= ratio <= 2.3, ratio=ratio)


def _fuzz(ctx: dict):
    if "fuzz" not in ctx:
        ctx["fuzz"] = analysis.random_reflected_instances(100, seed=0, max_steps=64)
        ctx["witness"] = []
    return ctx["fuzz"]


def snell_fuzz(parts: _Parts, ctx: dict) -> None:
    g = zero_generator()
    worst = 0.0
    for inst in _fuzz(ctx):
        b = BarrierPair.build(inst.lattice, L=inst.L)
        q = solve_drbsde(inst.lattice, inst.xi, g, barriers=b)
        worst = max(worst, _max_gap(q.Y.values, snell_oracle(inst.lattice, inst.xi, inst.L).values))
        ctx["witness"].append((inst.lattice, b, q))
    parts.check("oracle_gap", worst <= 1e-10, cases=len(ctx["fuzz"]), oracle_gap=worst)


def dynkin_fuzz(parts: _Parts, ctx: dict) -> None:
    g = zero_generator()
    worst, ortho, flat = 0.0, 0, 0.0
    for inst in _fuzz(ctx):
        b = BarrierPair.build(inst.lattice, L=inst.L, U=inst.U)
        q = solve_drbsde(inst.lattice, inst.xi, g, barriers=b)
        worst = max(worst, _max_gap(q.Y.values, dynkin_oracle(inst.lattice, inst.xi, inst.L, inst.U).values))
        ortho += flat_off_report(q, b)["ortho_violations"]
        for k in range(inst.lattice.n_steps):
            flat = max(flat, float(np.max(np.abs((q.Y[k] - b.L[k]) * q.dK[k]))),
                       float(np.max(np.abs((b.U[k] - q.Y[k]) * q.dA[k]))))
        ctx["witness"].append((inst.lattice, b, q))
    parts.check("oracle_gap", worst <= 1e-10, oracle_gap=worst)
    parts.check("orthogonality", ortho == 0, ortho_violations=ortho)
    parts.check("flat_off", flat == 0.0, flat_off_max=flat)


def penalization_convergence(parts: _Parts, ctx: dict) -> None:
    lat, xi, L = snell_instance(32)
    t0 = time.perf_counter()
    lad = penalization_ladder_lower(lat, xi, zero_generator(), L=L)
    dt = time.perf_counter() - t0
    last = lad.entries[-1].gaps
    parts.check("monotone", lad.monotone_violations == 0, monotone_violations=lad.monotone_violations)
    parts.check("y_gap", last["y_sup"] <= 1e-2, y_gap=last["y_sup"])
    parts.check("k_gap", last["k_sup"] <= 5e-2, k_gap=last["k_sup"])
    parts.check("runtime", dt < 10.0, runtime=dt)


def triple_variant(parts: _Parts, ctx: dict) -> None:
    lat, xi, L, U = bounded_instance(32)
    g = linear_generator(0.5, 0.3, -0.2)
    worst, sandwich, roots = 0.0, 0, {}
    for v in VARIANTS:
        lad = penalization_ladder_mixed(lat, xi, g, L=L, U=U, variant=v)
        roots[v] = lad.limit.y0
        worst = max(worst, abs(lad.limit.y0 - lad.reference.y0))
        sandwich += lad.sandwich_violations
    parts.check("root_agreement", worst <= 2e-2, root_gap=worst)
    parts.check("sandwich", sandwich == 0, sandwich_violations=sandwich)


def comparison(parts: _Parts, ctx: dict) -> None:
    cases = analysis.random_comparison_cases(200, seed=0)
    rep = analysis.comparison_battery(cases, threads=ctx.get("threads", 1))
    by_id = {c.case_id: c for c in cases}
    lip = [r for r in rep.results if not by_id[r.case_id].osgood]
    osg = [r for r in rep.results if by_id[r.case_id].osgood]
    eq = [r for r in rep.results if by_id[r.case_id].equal_barriers]
    lip_ok = sum(r.verdict == "pass" for r in lip)
    k_ok = sum(r.k_ordering is True for r in eq)
    osg_fail = sum(r.verdict == "fail" for r in osg)
    fine = all(by_id[r.case_id].lattice.dt <= 1 / 128 for r in osg)
    parts.check("lipschitz_ordering", lip_ok == len(lip), lipschitz=f"{lip_ok}/{len(lip)}")
    parts.check("increment_ordering", k_ok == len(eq), equal_barrier=f"{k_ok}/{len(eq)}")
    parts.check("osgood", osg_fail == 0 and fine, osgood_cases=len(osg), osgood_failures=osg_fail)


def convolution_oracle(parts: _Parts, ctx: dict) -> None:
    x0 = np.zeros(1)
    quad = GeneratorSpec(lambda t, x, y, z: np.asarray(z)[..., 0] ** 2, name="z^2")
    probes = np.array([0.0, 1.0, 3.0])
    g4 = inf_convolve_z(quad, 4.0, 0.0, 1.0)
    vals = g4(0.0, x0, 0.0, probes[:, None])
    moreau = float(np.max(np.abs(vals - np.array([0.0, 1.0, 8.0]))))
    holder = GeneratorSpec(lambda t, x, y, z: np.sqrt(np.abs(np.asarray(z)[..., 0])), name="sqrt|z|")
    grid = np.linspace(-5.0, 5.0, 41)
    exact = 0.0
    for n in (1, 4, 16, 64, 256):
        gn = inf_convolve_z(holder, n, 0.5, 0.5)
        exact = max(exact, float(np.max(np.abs(gn(0.0, x0, 0.0, grid[:, None]) - np.sqrt(np.abs(grid))))))
    prev, viol = None, 0
    for n in range(1, 257):
        cur = inf_convolve_z(quad, n, 0.0, 1.0)(0.0, x0, 0.0, grid[:, None])
        if prev is not None:
            viol += int(np.sum(cur < prev))
        prev = cur
    parts.check("moreau", moreau <= 1e-3, moreau_error=moreau)
    parts.check("holder_fixed_point", exact == 0.0, holder_deviation=exact)
    parts.check("monotone_in_n", viol == 0, monotone_violations=viol)


def mokobodzki_closure(parts: _Parts, ctx: dict) -> None:
    if not ctx.get("witness"):
        sub = _Parts()
        snell_fuzz(sub, ctx)
        dynkin_fuzz(sub, ctx)
    g = zero_generator()
    closed, worst = 0, 0.0
    for lat, b, q in ctx["witness"]:
        w = analysis.mokobodzki_check(lat, g, b, solution=q)
        worst = max(worst, w.residual)
        closed += bool(w.sandwich_ok and w.residual <= 1e-10)
    n = len(ctx["witness"])
    parts.check("closure", closed == n, closed=f"{closed}/{n}", residual=worst)


def mc_cross_validation(parts: _Parts, ctx: dict) -> None:
    g = cubic_driver()
    grid = TimeGrid(1.0, 64)
    xi = lambda t, x: x[..., 0] ** 2  # noqa: E731
    lattice_y0 = solve_bsde(build_lattice(grid, 1), xi, g).y0
    t0 = time.perf_counter()
    a = solve_bsde_mc(sample_paths(grid, 1, 100_000, seed=2024), xi, g)
    dt = time.perf_counter() - t0
    b = solve_bsde_mc(sample_paths(grid, 1, 100_000, seed=2024), xi, g)
    gap = abs(a.y0 - lattice_y0)
    parts.check("agreement", gap <= 2e-2, mc_y0=a.y0, lattice_y0=lattice_y0, gap=gap)
    parts.check("bitwise_repeat", a.y0 == b.y0 and a.Y.tobytes() == b.Y.tobytes(), repeat_equal=a.y0 == b.y0)
    parts.check("runtime", dt < 60.0, runtime=dt)


def bundled_manifests() -> dict[str, str]:
    """Bundled manifest texts keyed by name."""
    base = resources.files("l1bsde") / "manifests"
    return {p.name[:-5]: p.read_text() for p in sorted(base.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".yaml")}


def determinism_exit(parts: _Parts, ctx: dict) -> None:
    quiet = Progress(io.StringIO(), enabled=False)
    mismatched, nonzero = [], []
    docs = {name: yaml.safe_load(text) for name, text in bundled_manifests().items()}
    for name, doc in docs.items():
        m = from_dict(doc, name)
        a = execute(m, progress=quiet, write=False, threads=ctx.get("threads", 1))
        b = execute(m, progress=quiet, write=False, threads=ctx.get("threads", 1))
        if a.digest != b.digest:
            mismatched.append(name)
        if a.exit_code != 0:
            nonzero.append(name)
    doc = copy.deepcopy(docs["snell_penalization"])
    doc["checks"] = list(doc.get("checks") or []) + [{"quantity": "Y0", "eq": -1.0, "tol": 1e-9}]
    injected = execute(from_dict(doc, "injected"), progress=quiet, write=False)
    parts.check("digests", not mismatched, manifests=len(docs), digest_mismatches=len(mismatched))
    parts.check("bundled_exit_zero", not nonzero, nonzero_exits=",".join(nonzero) or "none")
    parts.check("injected_failure", injected.exit_code != 0, injected_exit=injected.exit_code)


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    fn: Callable[[_Parts, dict], None]


CORE = (
    Criterion(1, "martingale_exactness", martingale_exactness),
    Criterion(2, "linear_closed_form", linear_closed_form),
    Criterion(3, "snell_oracle", snell_fuzz),
    Criterion(4, "dynkin_oracle", dynkin_fuzz),
    Criterion(5, "penalization_convergence", penalization_convergence),
    Criterion(6, "triple_variant", triple_variant),
    Criterion(7, "comparison", comparison),
    Criterion(8, "convolution_oracle", convolution_oracle),
    Criterion(9, "mokobodzki_closure", mokobodzki_closure),
    Criterion(10, "mc_cross_validation", mc_cross_validation),
    Criterion(11, "determinism_exit", determinism_exit),
)
SUITES = {"core": CORE}


class UnknownSuiteError(KeyError):
    def __str__(self):
        return self.args[0]


def select(suite: str, only: str | None = None) -> tuple[Criterion, ...]:
    if suite not in SUITES:
        raise UnknownSuiteError(f"unknown suite {suite!r}; available suites: {', '.join(sorted(SUITES))}")
    crits = SUITES[suite]
    if only:
        keys = [k.strip() for k in only.split(",") if k.strip()]
        crits = tuple(c for c in crits if any(k == str(c.number) or k in c.name for k in keys))
    return crits


def run_criterion(c: Criterion, ctx: dict | None = None) -> CriterionResult:
    ctx = {} if ctx is None else ctx
    parts = _Parts()
    t0 = time.perf_counter()
    c.fn(parts, ctx)
    return CriterionResult(c.number, c.name, not parts.failed, parts.measured, parts.failed,
                           time.perf_counter() - t0)


def verify(suite: str = "core", only: str | None = None, threads: int = 1,
           report: Callable[[CriterionResult], None] | None = None) -> list[CriterionResult]:
    ctx = {"threads": threads}
    out = []
    for c in select(suite, only):
        r = run_criterion(c, ctx)
        if report is not None:
            report(r)
        out.append(r)
    return out
