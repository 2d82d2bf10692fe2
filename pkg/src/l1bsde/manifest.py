"""Experiment manifests: YAML documents describing one run.

A manifest has a mandatory ``version: 1`` key and the blocks ``model``,
``data``, ``generator``, ``scheme``, ``schedule``, ``numerics``, ``outputs``
and ``checks``.  Every expression (terminal value, barriers, forcing rate,
custom driver) uses the grammar of :mod:`l1bsde.generators.expr`.

Example::

    version: 1
    name: snell_penalization
    model: {T: 1.0, n_steps: 32, d: 1, backend: lattice}
    data:
      xi: "B**2"
      L: {before_T: "0.5", at_T: "min(0.5, B**2)"}
    generator: zero
    scheme: {type: ladder, variant: lower}
    schedule: [1, 4, 16, 64, 256, 1024]
    checks:
      - {quantity: monotone_violations, le: 0}

:func:`canonical` fills in defaults and normalises shorthands; ``parse`` of
``dump`` of a canonical manifest returns the same canonical manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .generators.catalog import SPLITS, get as catalog_get
from .generators.expr import ExpressionError, data_function, generator_function

FORMAT_VERSION = 1
BACKENDS = ("lattice", "mc")
SCHEMES = ("direct", "ladder", "convolution", "battery")
LADDER_VARIANTS = ("lower", "upper", "via_upper_rbsde", "via_lower_rbsde", "via_bsde")
BATTERIES = ("comparison", "uniqueness", "mokobodzki", "norms")
CHECK_OPS = ("eq", "le", "ge", "is")
FORMATS = ("csv", "json")
# generator names usable without the catalog
BUILTIN_GENERATORS = ("zero",)

_SCHEME_OPTIONS = {
    "direct": {"degree", "bootstrap"},
    "ladder": {"strict"},
    "convolution": {"points", "joint_points", "max_radius"},
    "battery": {"n_cases", "seed", "osgood_share", "shifts", "dampings", "ladder_n"},
}
_GENERATOR_PARAMS = {"growth_constant", "stiffness", "lam", "alpha", "mu", "mu_tilde", "lam_tilde", "alpha_tilde"}


class ManifestError(ValueError):
    """Base class for manifest problems."""


class ManifestParseError(ManifestError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line, self.column = line, column


class ManifestValidationError(ManifestError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Model:
    T: float = 1.0
    n_steps: int = 32
    d: int = 1
    backend: str = "lattice"
    M: int | None = None
    seed: int | None = None


@dataclass(frozen=True)
class Barrier:
    """Barrier expressions before and at the horizon; ``None`` means no barrier."""

    before_T: str
    at_T: str


@dataclass(frozen=True)
class Data:
    xi: str
    V: str | None = None
    L: Barrier | None = None
    U: Barrier | None = None


@dataclass(frozen=True)
class Generator:
    """Either a single driver (catalog id or expression) or a split ``g1 + g2``."""

    catalog: str | None = None
    expr: str | None = None
    split: tuple[str | None, str | None] | None = None
    classes: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scheme:
    type: str = "direct"
    variant: str | None = None
    kind: str | None = None
    battery: str | None = None
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NumericsBlock:
    tol: float = 1e-12
    max_iter: int = 200
    beta: float = 0.5


@dataclass(frozen=True)
class Outputs:
    dir: str | None = None
    formats: tuple[str, ...] = FORMATS


@dataclass(frozen=True)
class Check:
    quantity: str
    op: str
    value: Any
    tol: float = 0.0


@dataclass(frozen=True)
class Manifest:
    name: str
    model: Model
    data: Data
    generator: Generator
    scheme: Scheme
    schedule: tuple[float, ...] = ()
    numerics: NumericsBlock = NumericsBlock()
    outputs: Outputs = Outputs()
    checks: tuple[Check, ...] = ()
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_numerics(self, **changes) -> "Manifest":
        from dataclasses import replace

        return replace(self, numerics=replace(self.numerics, **{k: v for k, v in changes.items() if v is not None}))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


# parsing --------------------------------------------------------------------------------

def _expr_text(v, path: str) -> str:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ManifestValidationError(path, f"expected an expression or a number, got {type(v).__name__}")
    if isinstance(v, str):
        if not v.strip():
            raise ManifestValidationError(path, "empty expression")
        return v.strip()
    return repr(float(v))


def _number(v, path: str, kind=float, positive: bool = False, allow_none: bool = False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ManifestValidationError(path, f"expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ManifestValidationError(path, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ManifestValidationError(path, "must be finite")
    if positive and v <= 0:
        raise ManifestValidationError(path, f"must be positive, got {v!r}")
    return v


def _mapping(v, path: str, allowed: set) -> dict:
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ManifestValidationError(path, f"expected a mapping, got {type(v).__name__}")
    extra = set(v) - allowed
    if extra:
        raise ManifestValidationError(path, f"unknown keys {sorted(extra)}; allowed: {sorted(allowed)}")
    return v


def _barrier(v, path: str) -> Barrier | None:
    if v is None or (isinstance(v, str) and v.strip().lower() == "none"):
        return None
    if isinstance(v, dict):
        v = _mapping(v, path, {"before_T", "at_T"})
        if "before_T" not in v:
            raise ManifestValidationError(path, "before_T is required")
        before = _expr_text(v["before_T"], f"{path}.before_T")
        return Barrier(before, _expr_text(v.get("at_T", before), f"{path}.at_T"))
    text = _expr_text(v, path)
    return Barrier(text, text)


def _model(v) -> Model:
    v = _mapping(v, "model", {"T", "n_steps", "d", "backend", "M", "seed"})
    backend = v.get("backend", "lattice")
    if backend not in BACKENDS:
        raise ManifestValidationError("model.backend", f"unknown backend {backend!r}; known: {list(BACKENDS)}")
    m = Model(_number(v.get("T", 1.0), "model.T", positive=True),
              _number(v.get("n_steps", 32), "model.n_steps", int, positive=True),
              _number(v.get("d", 1), "model.d", int, positive=True), backend,
              _number(v.get("M"), "model.M", int, positive=True, allow_none=True),
              _number(v.get("seed"), "model.seed", int, allow_none=True))
    if backend == "lattice" and m.d > 2:
        raise ManifestValidationError("model.d", f"the lattice backend supports d <= 2, got {m.d}")
    if backend == "mc":
        if m.seed is None:
            raise ManifestValidationError("model.seed", "a seed is mandatory for the mc backend")
        if m.M is None:
            raise ManifestValidationError("model.M", "the mc backend needs a path count M")
    return m


def _data(v) -> Data:
    v = _mapping(v, "data", {"xi", "V", "L", "U"})
    if "xi" not in v:
        raise ManifestValidationError("data.xi", "terminal value is required")
    V = v.get("V")
    V = None if V is None or (isinstance(V, str) and V.strip().lower() == "none") else _expr_text(V, "data.V")
    return Data(_expr_text(v["xi"], "data.xi"), V, _barrier(v.get("L"), "data.L"), _barrier(v.get("U"), "data.U"))


def _catalog_id(name, path: str) -> str:
    if not isinstance(name, str):
        raise ManifestValidationError(path, f"expected a catalog id, got {name!r}")
    if name in BUILTIN_GENERATORS or name in SPLITS:
        return name
    try:
        catalog_get(name)
    except KeyError as exc:
        raise ManifestValidationError(path, exc.args[0]) from None
    return name


def _generator(v) -> Generator:
    if isinstance(v, str):
        v = {"catalog": v}
    v = _mapping(v, "generator", {"catalog", "expr", "split", "classes"} | _GENERATOR_PARAMS)
    chosen = [k for k in ("catalog", "expr", "split") if v.get(k) is not None]
    if len(chosen) != 1:
        raise ManifestValidationError("generator", "give exactly one of catalog, expr, split")
    classes = v.get("classes") or ()
    if isinstance(classes, str):
        classes = (classes,)
    params = {k: _number(v[k], f"generator.{k}") for k in sorted(_GENERATOR_PARAMS) if v.get(k) is not None}
    cat, expr, split = v.get("catalog"), v.get("expr"), v.get("split")
    if cat is not None:
        cat = _catalog_id(cat, "generator.catalog")
        if cat in SPLITS:
            cat, split = None, SPLITS[cat]
    if expr is not None:
        expr = _expr_text(expr, "generator.expr")
    if split is not None:
        if not isinstance(split, (list, tuple)) or len(split) != 2 or split == [None, None]:
            raise ManifestValidationError("generator.split", "expected [g1, g2] with at least one id")
        split = tuple(None if s is None else _catalog_id(s, f"generator.split[{i}]") for i, s in enumerate(split))
    return Generator(cat, expr, split, tuple(sorted(str(c) for c in classes)), params)


def _scheme(v) -> Scheme:
    if isinstance(v, str):
        v = {"type": v}
    v = _mapping(v, "scheme", {"type", "variant", "kind", "battery", "options"})
    typ = v.get("type", "direct")
    if typ not in SCHEMES:
        raise ManifestValidationError("scheme.type", f"unknown scheme {typ!r}; known: {list(SCHEMES)}")
    variant, kind, battery = v.get("variant"), v.get("kind"), v.get("battery")
    if typ == "ladder":
        variant = variant or "lower"
        if variant not in LADDER_VARIANTS:
            raise ManifestValidationError("scheme.variant",
                                          f"unknown ladder variant {variant!r}; known: {list(LADDER_VARIANTS)}")
    elif variant is not None:
        raise ManifestValidationError("scheme.variant", "only ladder schemes take a variant")
    if typ == "convolution":
        kind = kind or "inf"
        if kind not in ("inf", "sup"):
            raise ManifestValidationError("scheme.kind", "must be 'inf' or 'sup'")
    elif kind is not None:
        raise ManifestValidationError("scheme.kind", "only convolution schemes take a kind")
    if typ == "battery":
        if battery not in BATTERIES:
            raise ManifestValidationError("scheme.battery", f"unknown battery {battery!r}; known: {list(BATTERIES)}")
    elif battery is not None:
        raise ManifestValidationError("scheme.battery", "only battery schemes take a battery id")
    options = dict(_mapping(v.get("options"), "scheme.options", _SCHEME_OPTIONS[typ]))
    for key, val in options.items():
        if isinstance(val, list):
            options[key] = [_number(x, f"scheme.options.{key}") for x in val]
        elif not isinstance(val, bool):
            options[key] = _number(val, f"scheme.options.{key}",
                                   float if key in ("osgood_share", "max_radius", "ladder_n") else int)
    return Scheme(typ, variant, kind, battery, dict(sorted(options.items())))


def _schedule(v, scheme: Scheme) -> tuple:
    v = v or []
    if not isinstance(v, (list, tuple)):
        raise ManifestValidationError("schedule", "expected a list of penalty levels")
    s = tuple(_number(x, f"schedule[{i}]", positive=True) for i, x in enumerate(v))
    for i, (a, b) in enumerate(zip(s, s[1:])):
        if b <= a:
            raise ManifestValidationError(f"schedule[{i + 1}]", f"schedule must be strictly increasing ({a} then {b})")
    if scheme.type in ("ladder", "convolution") and not s:
        raise ManifestValidationError("schedule", f"the {scheme.type} scheme needs a nonempty schedule")
    return s


def _numerics(v) -> NumericsBlock:
    v = _mapping(v, "numerics", {"tol", "max_iter", "beta"})
    n = NumericsBlock(_number(v.get("tol", 1e-12), "numerics.tol", positive=True),
                      _number(v.get("max_iter", 200), "numerics.max_iter", int, positive=True),
                      _number(v.get("beta", 0.5), "numerics.beta"))
    if not 0 < n.beta < 1:
        raise ManifestValidationError("numerics.beta", "must lie in (0, 1)")
    return n


def _outputs(v) -> Outputs:
    v = _mapping(v, "outputs", {"dir", "formats"})
    formats = v.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [formats]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ManifestValidationError("outputs.formats", f"unknown formats {bad}; known: {list(FORMATS)}")
    d = v.get("dir")
    return Outputs(None if d is None else str(d), tuple(f for f in FORMATS if f in formats))


def _checks(v) -> tuple:
    if v is None:
        return ()
    if not isinstance(v, list):
        raise ManifestValidationError("checks", "expected a list")
    out = []
    for i, c in enumerate(v):
        path = f"checks[{i}]"
        c = _mapping(c, path, {"quantity", "tol"} | set(CHECK_OPS))
        ops = [o for o in CHECK_OPS if o in c]
        if "quantity" not in c or len(ops) != 1:
            raise ManifestValidationError(path, f"needs a quantity and exactly one of {list(CHECK_OPS)}")
        op = ops[0]
        val = c[op]
        if op == "is":
            if not isinstance(val, bool):
                raise ManifestValidationError(f"{path}.is", "expected true or false")
        else:
            val = _number(val, f"{path}.{op}")
        out.append(Check(str(c["quantity"]), op, val, _number(c.get("tol", 0.0), f"{path}.tol")))
    return tuple(out)


def from_dict(doc: Any, default_name: str = "run") -> Manifest:
    if not isinstance(doc, dict):
        raise ManifestValidationError("<root>", "a manifest is a mapping")
    allowed = {"version", "name", "model", "data", "generator", "scheme", "schedule", "numerics", "outputs", "checks"}
    extra = set(doc) - allowed
    if extra:
        raise ManifestValidationError("<root>", f"unknown keys {sorted(extra)}")
    if doc.get("version") != FORMAT_VERSION:
        raise ManifestValidationError("version", f"expected version: {FORMAT_VERSION}, got {doc.get('version')!r}")
    for key in ("data", "generator"):
        if key not in doc:
            raise ManifestValidationError(key, "block is required")
    scheme = _scheme(doc.get("scheme"))
    m = Manifest(str(doc.get("name", default_name)), _model(doc.get("model")), _data(doc["data"]),
                 _generator(doc["generator"]), scheme, _schedule(doc.get("schedule"), scheme),
                 _numerics(doc.get("numerics")), _outputs(doc.get("outputs")), _checks(doc.get("checks")))
    _cross_check(m)
    return m


def _cross_check(m: Manifest) -> None:
    d = m.model.d
    for path, text in (("data.xi", m.data.xi), ("data.V", m.data.V)):
        if text is not None:
            _compile_data(text, m.model.T, d, path)
    for side in ("L", "U"):
        b = getattr(m.data, side)
        if b is not None:
            _compile_data(b.before_T, m.model.T, d, f"data.{side}.before_T")
            _compile_data(b.at_T, m.model.T, d, f"data.{side}.at_T")
    if m.generator.expr is not None:
        try:
            generator_function(m.generator.expr, d)
        except ExpressionError as exc:
            raise ManifestValidationError("generator.expr", str(exc)) from None
    if m.model.backend == "mc":
        if m.scheme.type != "direct":
            raise ManifestValidationError("scheme.type", "the mc backend runs the direct BSDE scheme only")
        if m.data.L is not None or m.data.U is not None:
            raise ManifestValidationError("data", "the mc backend does not support barriers")
        if m.generator.split is not None:
            raise ManifestValidationError("generator", "the mc backend takes a single driver")
    if m.scheme.type == "convolution" and m.generator.split is None:
        raise ManifestValidationError("generator", "the convolution scheme needs a split generator [g1, g2]")
    if m.scheme.type == "ladder":
        need = {"lower": ("L",), "upper": ("U",)}.get(m.scheme.variant, ("L", "U"))
        for side in need:
            if getattr(m.data, side) is None:
                raise ManifestValidationError(f"data.{side}", f"the {m.scheme.variant} ladder needs this barrier")
    if m.scheme.battery == "mokobodzki" and m.data.L is None and m.data.U is None:
        raise ManifestValidationError("data", "the mokobodzki battery needs at least one barrier")


def _compile_data(text: str, T: float, d: int, path: str):
    try:
        return data_function(text, T, d)
    except ExpressionError as exc:
        raise ManifestValidationError(path, str(exc)) from None


def parse(text: str, default_name: str = "run") -> Manifest:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark is not None else (None, None)
        raise ManifestParseError(exc.problem or str(exc), line, col) from None
    except yaml.YAMLError as exc:
        raise ManifestParseError(str(exc)) from None
    return from_dict(doc, default_name)


def load(path) -> Manifest:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {p}: {exc.strerror}") from None
    return parse(text, default_name=p.stem)


def canonical(m: Manifest) -> dict:
    """Plain-data canonical form: every default present, shorthands expanded."""
    doc = m.to_dict()
    g = doc["generator"]
    for side in ("L", "U"):
        b = doc["data"][side]
        doc["data"][side] = "none" if b is None else b
    doc["data"]["V"] = doc["data"]["V"] or "none"
    doc["generator"] = {k: v for k, v in g.items() if k not in ("params",) and v is not None}
    doc["generator"].update(g["params"])
    doc["generator"]["classes"] = list(g["classes"])
    sch = doc["scheme"]
    doc["scheme"] = {k: v for k, v in sch.items() if v is not None}
    checks = []
    for c in doc["checks"]:
        item = {"quantity": c["quantity"], c["op"]: c["value"]}
        if c["tol"]:
            item["tol"] = c["tol"]
        checks.append(item)
    doc["checks"] = checks
    if doc["outputs"]["dir"] is None:
        del doc["outputs"]["dir"]
    return doc


def dump(m: Manifest) -> str:
    return yaml.safe_dump(canonical(m), sort_keys=True, default_flow_style=None)


def build_barriers(m: Manifest, lattice):
    """Barrier node processes for ``m`` on ``lattice``; raises naming the node when ``L > U``."""
    import numpy as np

    from .lattice import LatticeError, NodeProcess
    from .reflected import BarrierPair

    def proc(b: Barrier | None, side: str):
        if b is None:
            return None
        before = data_function(b.before_T, m.model.T, m.model.d)
        at = data_function(b.at_T, m.model.T, m.model.d)
        N = lattice.n_steps
        layers = [np.asarray(before(lattice.grid.time(k), lattice.states(k)), dtype=float) for k in range(N)]
        layers.append(np.asarray(at(lattice.grid.time(N), lattice.states(N)), dtype=float))
        for k, v in enumerate(layers):
            if not np.all(np.isfinite(v)):
                node = tuple(int(i) for i in np.argwhere(~np.isfinite(v))[0])
                raise ManifestValidationError(f"data.{side}", f"non-finite barrier value at step {k}, node {node}")
        return NodeProcess(lattice, tuple(layers), name=side)

    try:
        return BarrierPair.build(lattice, proc(m.data.L, "L"), proc(m.data.U, "U"))
    except LatticeError as exc:
        raise ManifestValidationError("data", str(exc)) from None
