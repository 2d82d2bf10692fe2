"""Run a manifest: build the problem, dispatch the scheme, persist a :class:`RunRecord`.

Tables are written as CSV with pinned column lists (``TABLE_SCHEMAS``,
versioned by ``SCHEMA_VERSION``), the record as ``record.json`` and
progress as one JSON object per line on standard error.  The record digest
covers the manifest hash, scalars, tables and assertion outcomes but not
the wall-clock, so identical manifests give identical digests on the
lattice backend.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

import numpy as np

from . import analysis, norms
from .bsde import Numerics, RegressionConfig, as_forcing, solve_bsde_mc, solve_minimal_via_convolution
from .generators.catalog import get as catalog_get
from .generators.convolution import SearchConfig
from .generators.expr import data_function, generator_function
from .generators.spec import GeneratorSpec, add, zero_generator
from .lattice import TimeGrid, build_lattice, sample_paths
from .manifest import Check, Manifest, build_barriers, load
from .reflected import (
    BarrierPair,
    flat_off_report,
    max_violation,
    penalization_ladder_lower,
    penalization_ladder_mixed,
    penalization_ladder_upper,
    solve_drbsde,
)

SCHEMA_VERSION = 1
TABLE_SCHEMAS: dict[str, tuple[str, ...]] = {
    "steps": ("step", "t", "nodes", "Y_min", "Y_max", "Y_mean", "Z_abs_max", "dK_mean", "dA_mean",
              "iterations_max", "residual_max"),
    "ladder": ("n", "Y0", "K_T_mean", "A_T_mean", "y_sup", "y_s_beta", "z_m_beta", "k_sup", "k_s_beta",
               "a_sup", "a_s_beta", "monotone_violations", "sandwich_violations"),
    "convolution": ("n", "Y0", "gap_prev", "iterations_max"),
    "mc_steps": ("step", "t", "Y_mean", "Y_std", "condition_number", "iterations_max"),
    "battery": ("case_id", "solver", "verdict", "y_margin", "k_ordering"),
    "class_d": ("c", "tail"),
}
ENV_OUT_DIR = "L1BSDE_OUT_DIR"
DEFAULT_OUT_DIR = "l1bsde_out"


@dataclass
class Assertion:
    quantity: str
    op: str
    expected: Any
    measured: Any
    passed: bool
    note: str = ""


@dataclass
class RunRecord:
    name: str
    manifest_hash: str
    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    assertions: list[Assertion] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    digest: str = ""
    out_dir: str | None = None

    @property
    def exit_code(self) -> int:
        return 0 if not self.errors and all(a.passed for a in self.assertions) else 1

    def to_json(self) -> dict:
        return {
            "name": self.name, "schema_version": SCHEMA_VERSION, "manifest_hash": self.manifest_hash,
            "digest": self.digest, "scalars": _jsonable(self.scalars),
            "assertions": [_jsonable(vars(a)) for a in self.assertions],
            "errors": list(self.errors), "tables": {k: len(v) for k, v in self.tables.items()},
            "wall_clock": self.wall_clock, "exit_code": self.exit_code,
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def content_digest(manifest_hash: str, scalars: dict, tables: dict, assertions: list[Assertion],
                   errors: list[str]) -> str:
    """SHA-256 over everything a run produced except timing."""
    payload = {"manifest": manifest_hash, "scalars": _jsonable(scalars),
               "tables": {k: _jsonable(v) for k, v in sorted(tables.items())},
               "assertions": [_jsonable(vars(a)) for a in assertions], "errors": errors}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class Progress:
    """Newline-delimited JSON events on a stream (stderr by default)."""

    def __init__(self, stream: IO | None = None, enabled: bool = True):
        self.stream = stream if stream is not None else sys.stderr
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def emit(self, event: str, **fields) -> None:
        if not self.enabled:
            return
        rec = {"event": event, "elapsed": round(time.perf_counter() - self.t0, 6), **_jsonable(fields)}
        self.stream.write(json.dumps(rec) + "\n")
        self.stream.flush()


# problem construction ---------------------------------------------------------------

def _catalog_driver(name: str) -> GeneratorSpec:
    return zero_generator() if name == "zero" else catalog_get(name)


def build_generators(m: Manifest) -> tuple[GeneratorSpec | None, GeneratorSpec | None]:
    """``(g1, g2)``; a single driver comes back as ``(g, None)``."""
    gb = m.generator
    if gb.split is not None:
        parts = tuple(None if s is None else _catalog_driver(s) for s in gb.split)
        return parts[0], parts[1]
    if gb.catalog is not None:
        g = _catalog_driver(gb.catalog)
        if gb.classes:
            g = g.with_(classes=frozenset(gb.classes))
    else:
        g = GeneratorSpec(generator_function(gb.expr, m.model.d), name=gb.expr, classes=frozenset(gb.classes))
    if gb.params:
        g = g.with_(**gb.params)
    return g, None


def build_driver(m: Manifest) -> GeneratorSpec:
    g1, g2 = build_generators(m)
    if g1 is not None and g2 is not None:
        return add(g1, g2)
    return g1 if g1 is not None else g2


def numerics_for(m: Manifest) -> Numerics:
    return Numerics(tol=m.numerics.tol, max_iter=m.numerics.max_iter, beta=m.numerics.beta)


@dataclass
class Problem:
    manifest: Manifest
    lattice: Any
    xi: Any
    V: Any
    barriers: BarrierPair | None
    numerics: Numerics


def build_problem(m: Manifest) -> Problem:
    T, N, d = m.model.T, m.model.n_steps, m.model.d
    xi = data_function(m.data.xi, T, d)
    rate = data_function(m.data.V, T, d) if m.data.V is not None else None
    if m.model.backend == "mc":
        return Problem(m, None, xi, rate, None, numerics_for(m))
    lat = build_lattice(TimeGrid(T, N), d)
    V = as_forcing(lat, None) if rate is None else _forcing(lat, rate)
    return Problem(m, lat, xi, V, build_barriers(m, lat), numerics_for(m))


def _forcing(lat, rate):
    from .bsde import ForcingTerm

    return ForcingTerm.from_rate(lat, rate)


# tables ------------------------------------------------------------------------------

def _steps_table(q, diags) -> list[dict]:
    lat = q.lattice
    rows = []
    for k in range(lat.n_steps + 1):
        y = np.asarray(q.Y[k])
        last = k == lat.n_steps
        z = None if last else np.asarray(q.Z[k])
        di = None if last or k >= len(diags) else diags[k]
        rows.append({
            "step": k, "t": lat.grid.time(k), "nodes": int(y.size),
            "Y_min": float(y.min()), "Y_max": float(y.max()), "Y_mean": float(lat.expectation(y, k)),
            "Z_abs_max": 0.0 if z is None else float(np.max(np.abs(z), initial=0.0)),
            "dK_mean": 0.0 if last else float(lat.expectation(q.dK[k], k)),
            "dA_mean": 0.0 if last else float(lat.expectation(q.dA[k], k)),
            "iterations_max": 0 if di is None else int(np.max(di.iterations, initial=0)),
            "residual_max": 0.0 if di is None else float(di.max_residual),
        })
    return rows


# scheme runners ------------------------------------------------------------------------

def _run_direct(p: Problem, scalars: dict, tables: dict, progress: Progress) -> None:
    m = p.manifest
    g = build_driver(m)
    if m.model.backend == "mc":
        bundle = sample_paths(TimeGrid(m.model.T, m.model.n_steps), m.model.d, m.model.M, m.model.seed)
        opts = m.scheme.options
        reg = RegressionConfig(degree=int(opts.get("degree", 2)), bootstrap=int(opts.get("bootstrap", 200)),
                               seed=m.model.seed)
        sol = solve_bsde_mc(bundle, p.xi, g, p.V, reg, p.numerics)
        scalars.update(Y0=sol.y0, std_error=sol.std_error, max_condition=float(sol.condition_numbers.max()),
                       max_residual=sol.max_residual)
        tables["mc_steps"] = [
            {"step": k, "t": bundle.grid.time(k), "Y_mean": float(sol.Y[:, k].mean()),
             "Y_std": float(sol.Y[:, k].std()),
             "condition_number": float(sol.condition_numbers[k]) if k < m.model.n_steps else 0.0,
             "iterations_max": int(sol.iterations[k]) if k < m.model.n_steps else 0}
            for k in range(m.model.n_steps + 1)]
        return
    q = solve_drbsde(p.lattice, p.xi, g, p.V, p.barriers, p.numerics)
    flat = flat_off_report(q, p.barriers)
    scalars.update(Y0=q.y0, K_T=q.expected_K_T, A_T=q.expected_A_T, max_residual=q.max_residual,
                   kl=flat["kl"], ua=flat["ua"], ortho_violations=flat["ortho_violations"],
                   barrier_violation=max_violation(q, p.barriers))
    tables["steps"] = _steps_table(q, q.diagnostics)
    progress.emit("solved", scheme="direct", Y0=q.y0)


def _run_ladder(p: Problem, scalars: dict, tables: dict, progress: Progress) -> None:
    m = p.manifest
    g = build_driver(m)
    v = m.scheme.variant
    strict = bool(m.scheme.options.get("strict", False))
    common = dict(schedule=m.schedule, numerics=p.numerics, beta=m.numerics.beta, strict=strict)
    if v == "lower":
        lad = penalization_ladder_lower(p.lattice, p.xi, g, p.V, p.barriers.L, **common)
    elif v == "upper":
        lad = penalization_ladder_upper(p.lattice, p.xi, g, p.V, p.barriers.U, **common)
    else:
        lad = penalization_ladder_mixed(p.lattice, p.xi, g, p.V, p.barriers.L, p.barriers.U, variant=v, **common)
    for e in lad.entries:
        progress.emit("ladder", n=e.n, Y0=e.solution.y0, y_sup=e.gaps["y_sup"])
    table = lad.table()
    tables["ladder"] = table
    last = table[-1]
    scalars.update(Y0=lad.limit.y0, Y0_direct=lad.reference.y0, root_gap=abs(lad.limit.y0 - lad.reference.y0),
                   K_T=lad.limit.expected_K_T,
                   A_T=lad.limit.expected_A_T, K_T_direct=lad.reference.expected_K_T,
                   A_T_direct=lad.reference.expected_A_T,
                   monotone_violations=lad.monotone_violations, sandwich_violations=lad.sandwich_violations,
                   gaps_tail_nonincreasing=lad.tail_nonincreasing("y_sup", 3))
    for key in ("y_sup", "y_s_beta", "z_m_beta", "k_sup", "k_s_beta", "a_sup", "a_s_beta"):
        scalars[f"gap_{key}"] = last[key]


def _run_convolution(p: Problem, scalars: dict, tables: dict, progress: Progress) -> None:
    m = p.manifest
    g1, g2 = build_generators(m)
    o = m.scheme.options
    search = SearchConfig(points=int(o.get("points", 513)), joint_points=int(o.get("joint_points", 129)),
                          max_radius=float(o.get("max_radius", 1e4)))
    seq = solve_minimal_via_convolution(p.lattice, p.xi, g1, g2, p.V, m.schedule, m.scheme.kind, p.numerics,
                                        search)
    rows, prev = [], None
    for n, s in zip(seq.schedule, seq.solutions):
        gap = math.nan if prev is None else norms.node_sup_diff(s.Y, prev.Y)
        rows.append({"n": n, "Y0": s.y0, "gap_prev": gap,
                     "iterations_max": max((int(np.max(d.iterations, initial=0)) for d in s.diagnostics),
                                           default=0)})
        progress.emit("convolution", n=n, Y0=s.y0)
        prev = s
    tables["convolution"] = rows
    scalars.update(Y0=seq.limit.y0, cauchy_gap=seq.cauchy_gap)


def _run_battery(p: Problem, scalars: dict, tables: dict, progress: Progress, threads: int) -> None:
    m = p.manifest
    o = m.scheme.options
    b = m.scheme.battery
    if b == "comparison":
        cases = analysis.random_comparison_cases(int(o.get("n_cases", 200)), int(o.get("seed", 0)),
                                                 float(o.get("osgood_share", 0.1)))
        rep = analysis.comparison_battery(cases, p.numerics, threads=threads)
        solver = {c.case_id: c.solver for c in cases}
        tables["battery"] = [{"case_id": r.case_id, "solver": solver[r.case_id], "verdict": r.verdict,
                              "y_margin": r.y_margin, "k_ordering": r.k_ordering} for r in rep.results]
        scalars.update(cases=len(rep.results), passed=rep.count("pass"), failed=rep.count("fail"),
                       inconclusive=rep.count("inconclusive"),
                       reverified_failures=sum(r.reverify() for r in rep.failures))
        return
    g = build_driver(m)
    if b == "uniqueness":
        rep = analysis.uniqueness_probe(p.lattice, p.xi, g, p.V, p.barriers,
                                        shifts=tuple(o.get("shifts", (-1.0, 1.0))),
                                        dampings=tuple(o.get("dampings", (0.5, 1.0))),
                                        ladder_n=o.get("ladder_n", 1024), numerics=p.numerics)
        scalars.update(verdict=rep.verdict, rerun_deviation=rep.rerun_deviation,
                       ladder_deviation=rep.ladder_deviation)
    elif b == "mokobodzki":
        w = analysis.mokobodzki_check(p.lattice, g, p.barriers, xi=p.xi, V=p.V, numerics=p.numerics)
        scalars.update(sandwich_ok=w.sandwich_ok, residual=w.residual, orthogonal_residual=w.orthogonal_residual,
                       c_variation=w.c_variation, g_at_X_norm=w.g_at_X_norm, violations=len(w.violations))
    elif b == "norms":
        q = solve_drbsde(p.lattice, p.xi, g, p.V, p.barriers, p.numerics)
        rep = analysis.estimate_norms(p.lattice, q.Y, q.Z, beta=m.numerics.beta)
        scalars.update(Y0=q.y0, s_beta=rep.s_beta, m_beta=rep.m_beta, s_beta_se=rep.s_beta_se,
                       m_beta_se=rep.m_beta_se, exact=rep.exact)
        curve = [c for _, c in rep.classD_curve]
        scalars["class_d_nonincreasing"] = all(b2 <= a + 1e-12 for a, b2 in zip(curve, curve[1:]))
        tables["class_d"] = [{"c": c, "tail": v} for c, v in rep.classD_curve]
    progress.emit("battery", battery=b)


# assertions ---------------------------------------------------------------------------

def evaluate(check: Check, scalars: dict) -> Assertion:
    if check.quantity not in scalars:
        return Assertion(check.quantity, check.op, check.value, None, False,
                         f"unknown quantity; available: {sorted(scalars)}")
    v = scalars[check.quantity]
    try:
        if check.op == "is":
            ok = bool(v) is check.value
        elif check.op == "eq":
            ok = abs(float(v) - check.value) <= check.tol
        elif check.op == "le":
            ok = float(v) <= check.value + check.tol
        else:
            ok = float(v) >= check.value - check.tol
    except (TypeError, ValueError):
        return Assertion(check.quantity, check.op, check.value, v, False, "not comparable")
    return Assertion(check.quantity, check.op, check.value, v, bool(ok))


# entry points -------------------------------------------------------------------------

def resolve_out_dir(m: Manifest, out_dir: str | os.PathLike | None) -> Path:
    base = out_dir or m.outputs.dir or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR
    return Path(base) / m.name


def execute(m: Manifest, *, out_dir=None, threads: int = 1, beta: float | None = None,
            tol: float | None = None, progress: Progress | None = None, write: bool = True) -> RunRecord:
    """Run an already parsed manifest; overrides become part of the hashed manifest."""
    m = m.with_numerics(beta=beta, tol=tol)
    progress = progress or Progress()
    t0 = time.perf_counter()
    rec = RunRecord(m.name, m.sha256())
    progress.emit("start", name=m.name, manifest_hash=rec.manifest_hash, scheme=m.scheme.type)
    scalars: dict = {}
    tables: dict = {}
    try:
        p = build_problem(m)
        if m.scheme.type == "direct":
            _run_direct(p, scalars, tables, progress)
        elif m.scheme.type == "ladder":
            _run_ladder(p, scalars, tables, progress)
        elif m.scheme.type == "convolution":
            _run_convolution(p, scalars, tables, progress)
        else:
            _run_battery(p, scalars, tables, progress, threads)
    except Exception as exc:  # reported in the record, never swallowed silently
        where = traceback.extract_tb(exc.__traceback__)[-1]
        rec.errors.append(f"{type(exc).__name__} in {m.scheme.type} run of {m.name!r}: {exc} "
                          f"({Path(where.filename).name}:{where.lineno})")
        progress.emit("error", message=rec.errors[-1])
    rec.scalars = scalars
    rec.tables = {k: [{c: row.get(c) for c in TABLE_SCHEMAS[k]} for row in v] for k, v in tables.items()}
    if not rec.errors:
        rec.assertions = [evaluate(c, scalars) for c in m.checks]
        for a in rec.assertions:
            progress.emit("check", quantity=a.quantity, passed=a.passed, measured=a.measured)
    rec.digest = content_digest(rec.manifest_hash, rec.scalars, rec.tables, rec.assertions, rec.errors)
    rec.wall_clock = time.perf_counter() - t0
    if write:
        rec.out_dir = str(write_outputs(rec, m, resolve_out_dir(m, out_dir)))
    progress.emit("done", exit_code=rec.exit_code, digest=rec.digest, wall_clock=rec.wall_clock)
    return rec


def run(path, **kwargs) -> RunRecord:
    return execute(load(path), **kwargs)


def write_outputs(rec: RunRecord, m: Manifest, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    if "csv" in m.outputs.formats:
        for name, rows in sorted(rec.tables.items()):
            with open(directory / f"{name}.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(TABLE_SCHEMAS[name]))
                w.writeheader()
                for row in rows:
                    w.writerow({k: _csv_cell(v) for k, v in row.items()})
    if "json" in m.outputs.formats:
        (directory / "record.json").write_text(json.dumps(rec.to_json(), indent=2, sort_keys=True) + "\n")
    return directory


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v
