"""
Run configuration: JSON file -> frozen dataclasses -> solver objects.

Schema (all numbers are decimal literals):

    {
      "name": "saddle_example",
      "seed": 0,
      "problem":  {"kind": "saddle", "M": [[1]], "a": [1], "b": [1],
                   "u_box": [[0, 1]], "v_box": [[0, 1]]}
                | {"kind": "prox", "box": [[0, 1], [0, 1]]}
                | {"kind": "affine", "matrix": [[...]], "offset": [...],
                   "box": [[lo, hi], ...], "lipschitz": null},
      "upper":    {"kind": "zero"}
                | {"kind": "prox", "center": [...], "weight": 1}
                | {"kind": "paired", "a1": {"matrix": ..., "offset": ...},
                   "a2": {...}, "tolerance": 1e-10, "max_inner": 1000000},
      "schedule": {"family": "offset_power", "lam0": 1, "beta0": 1, "growth": 0.5,
                   "rho": 0.9, "coupled": true, "decay": 2},
      "dynamics": {"family": "constant", "lam_bar": 1, "beta0": 1, "growth": 0,
                   "delta": 0.1, "c": 1, "coupled": true, "rho": 0.9,
                   "discrete_schedule": false},
      "solver":   {"x0": [...], "reference": [...], "tol_gap": 1e-8, "tol_step": 1e-8,
                   "max_iter": 100000, "exact": false, "method": "rk4", "step": 0.1,
                   "t_end": 200, "grid": 101, "oracle_tol": null, "horizon": 100000,
                   "samples": 10000},
      "check":    {"p": 0, "q": 0, "relative": false},
      "output":   {"format": "csv"}
    }

Only "problem" and "solver.x0" are required.
"""
import hashlib
import json
import logging
import re
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import numpy as np

from .bifunctions import (EquilibriumBifunction, PairedOperatorBifunction, ProxBifunction,
                          RESOLVENT_MAX_INNER, RESOLVENT_TOL, zero_bifunction)
from .errors import ConfigError, NumericalError, UsageError
from .geometry import BoxSet
from .operators import AffineMap, zero_map
from .services_dynamics import METHODS, ScheduleFn
from .services_fbf import BepInstance, Schedule, StoppingRule, validate_schedule
from .services_saddle import SaddleProblem, build_saddle_bep

logger = logging.getLogger(__name__)

PROBLEM_KINDS = ("saddle", "prox", "affine")
UPPER_KINDS = ("zero", "prox", "paired")
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    M: Optional[List[List[float]]] = None
    a: Optional[List[float]] = None
    b: Optional[List[float]] = None
    u_box: Optional[List[List[float]]] = None
    v_box: Optional[List[List[float]]] = None
    matrix: Optional[List[List[float]]] = None
    offset: Optional[List[float]] = None
    box: Optional[List[List[float]]] = None
    lipschitz: Optional[float] = None


@dataclass(frozen=True)
class UpperSpec:
    kind: str = "zero"
    center: Optional[List[float]] = None
    weight: float = 1.0
    a1: Optional[Dict[str, Any]] = None
    a2: Optional[Dict[str, Any]] = None
    tolerance: float = RESOLVENT_TOL
    max_inner: int = RESOLVENT_MAX_INNER


@dataclass(frozen=True)
class ScheduleSpec:
    family: str = "power_growth"
    lam0: float = 1.0
    beta0: float = 1.0
    growth: float = 0.0
    rho: float = 0.9
    coupled: bool = True
    decay: float = 2.0


@dataclass(frozen=True)
class DynamicsSpec:
    family: str = "constant"
    lam_bar: float = 1.0
    beta0: float = 1.0
    growth: float = 0.0
    delta: float = 0.1
    c: float = 1.0
    coupled: bool = True
    rho: float = 0.9
    discrete_schedule: bool = False


@dataclass(frozen=True)
class SolverSpec:
    x0: List[float] = field(default_factory=list)
    reference: Optional[List[float]] = None
    tol_gap: float = 1e-8
    tol_step: float = 1e-8
    max_iter: int = 100_000
    exact: bool = False
    method: str = "rk4"
    step: float = 0.1
    t_end: float = 10.0
    grid: int = 101
    oracle_tol: Optional[float] = None
    horizon: int = 100_000
    samples: int = 10_000


@dataclass(frozen=True)
class CheckSpec:
    p: float = 0.0
    q: float = 0.0
    relative: bool = False


@dataclass(frozen=True)
class OutputSpec:
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    solver: SolverSpec
    upper: UpperSpec = field(default_factory=UpperSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    check: CheckSpec = field(default_factory=CheckSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    name: str = "run"
    seed: int = 0
    source: str = ""

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("source")
        return data

    @property
    def digest(self) -> str:
        """sha256 of the canonical JSON form; identifies the run in the store."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ── Parsing ──────────────────────────────────────────────────────────────────

TOP_LEVEL = ("name", "seed", "problem", "upper", "schedule", "dynamics", "solver", "check", "output")


def _line_of(text: str, key: str) -> Optional[int]:
    """Line of the first occurrence of `"key":` in the raw JSON text."""
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _matches(value: Any, hint: Any) -> bool:
    """JSON value against a field annotation; bools are not numbers here."""
    origin, args = get_origin(hint), get_args(hint)
    if origin is Union:
        return any(_matches(value, a) for a in args)
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if origin is list:
        return isinstance(value, list) and all(_matches(v, args[0]) for v in value)
    if origin is dict:
        return isinstance(value, dict)
    return True


_TYPE_NAMES = {bool: ("true/false", "booleans"), int: ("an integer", "integers"),
               float: ("a number", "numbers"), str: ("a string", "strings")}


def _describe(hint: Any, plural: bool = False) -> str:
    if hint in _TYPE_NAMES:
        return _TYPE_NAMES[hint][plural]
    origin, args = get_origin(hint), get_args(hint)
    if origin is Union:
        return " or ".join(_describe(a, plural) for a in args if a is not type(None))
    if origin is list:
        return f"{'lists' if plural else 'a list'} of {_describe(args[0], plural=True)}"
    if origin is dict:
        return "objects" if plural else "an object"
    return str(hint)


def _check_types(data: Dict[str, Any], name: str, cls, text: str) -> None:
    hints = get_type_hints(cls)
    for key, value in data.items():
        if not _matches(value, hints[key]):
            raise ConfigError(f"expected {_describe(hints[key])}, got {json.dumps(value)}",
                              field=f"{name}.{key}", line=_line_of(text, key))


def _section(raw: Dict[str, Any], name: str, cls, text: str, required: bool = False):
    data = raw.get(name)
    if data is None:
        if required:
            raise ConfigError("missing section", field=name)
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected an object", field=name, line=_line_of(text, name))
    known = cls.__dataclass_fields__
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key; expected one of {sorted(known)}",
                              field=f"{name}.{key}", line=_line_of(text, key))
    _check_types(data, name, cls, text)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc), field=name, line=_line_of(text, name)) from exc


def parse_config(raw: Any, text: str = "", source: str = "") -> RunConfig:
    """Build and validate a RunConfig from decoded JSON; `text` feeds line diagnostics."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown top-level key; expected one of {list(TOP_LEVEL)}",
                              field=key, line=_line_of(text, key))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", field="seed", line=_line_of(text, "seed"))
    cfg = RunConfig(
        problem=_section(raw, "problem", ProblemSpec, text, required=True),
        solver=_section(raw, "solver", SolverSpec, text, required=True),
        upper=_section(raw, "upper", UpperSpec, text),
        schedule=_section(raw, "schedule", ScheduleSpec, text),
        dynamics=_section(raw, "dynamics", DynamicsSpec, text),
        check=_section(raw, "check", CheckSpec, text),
        output=_section(raw, "output", OutputSpec, text),
        name=str(raw.get("name", "run")),
        seed=seed,
        source=source,
    )
    validate_config(cfg, text)
    return cfg


def load_config(path: str) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
    logger.debug("loaded config %s", p.name)
    return parse_config(raw, text, source=p.name)


# ── Validation and assembly ──────────────────────────────────────────────────

def _box(intervals, field_name: str, text: str) -> BoxSet:
    if not intervals:
        raise ConfigError("box is required", field=field_name, line=_line_of(text, field_name.split(".")[-1]))
    try:
        return BoxSet.from_intervals(intervals)
    except (UsageError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"invalid box: {exc}", field=field_name,
                          line=_line_of(text, field_name.split(".")[-1])) from exc


@contextmanager
def _guard(field_name: str, text: str):
    """Re-raise construction errors as ConfigError for field_name."""
    try:
        yield
    except ConfigError:
        raise
    except (UsageError, NumericalError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), field=field_name,
                          line=_line_of(text, field_name.split(".")[-1])) from exc


def build_problem(cfg: RunConfig, text: str = "") -> Tuple[BepInstance, Optional[SaddleProblem]]:
    """Assemble the BepInstance (and the SaddleProblem for saddle configs)."""
    prob = cfg.problem
    if prob.kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {prob.kind!r}; expected one of {PROBLEM_KINDS}",
                          field="problem.kind", line=_line_of(text, "kind"))
    required = {"saddle": ("M", "a", "b", "u_box", "v_box"), "prox": ("box",),
                "affine": ("matrix", "box")}[prob.kind]
    for name in required:
        if getattr(prob, name) is None:
            raise ConfigError(f"required for kind {prob.kind!r}", field=f"problem.{name}",
                              line=_line_of(text, "problem"))
    saddle = None
    if prob.kind == "saddle":
        with _guard("problem.M", text):
            saddle = SaddleProblem(np.array(prob.M, dtype=float), np.array(prob.a, dtype=float),
                                   np.array(prob.b, dtype=float),
                                   _box(prob.u_box, "problem.u_box", text),
                                   _box(prob.v_box, "problem.v_box", text))
        k = saddle.k
    else:
        k = _box(prob.box, "problem.box", text)
    upper = build_upper(cfg, k, text)
    with _guard("problem", text):
        if saddle is not None:
            inst = build_saddle_bep(saddle, upper, name=cfg.name)
        elif prob.kind == "prox":
            inst = BepInstance(zero_map(k.dim), upper, k, name=cfg.name)
        else:
            lower = AffineMap(np.array(prob.matrix, dtype=float),
                              None if prob.offset is None else np.array(prob.offset, dtype=float),
                              lipschitz=prob.lipschitz, name="lower")
            inst = BepInstance(lower, upper, k, name=cfg.name)
    return inst, saddle


def _affine_block(data: Optional[Dict[str, Any]], name: str, text: str) -> AffineMap:
    if not isinstance(data, dict) or "matrix" not in data:
        raise ConfigError("expected an object with 'matrix' and optional 'offset'", field=name,
                          line=_line_of(text, name.split(".")[-1]))
    with _guard(name, text):
        return AffineMap(np.array(data["matrix"], dtype=float),
                         None if data.get("offset") is None else np.array(data["offset"], dtype=float),
                         lipschitz=data.get("lipschitz"), name=name.split(".")[-1])


def build_upper(cfg: RunConfig, k: BoxSet, text: str = "") -> EquilibriumBifunction:
    up = cfg.upper
    if up.kind not in UPPER_KINDS:
        raise ConfigError(f"unknown upper kind {up.kind!r}; expected one of {UPPER_KINDS}",
                          field="upper.kind", line=_line_of(text, "upper"))
    if up.kind == "zero":
        return zero_bifunction(k)
    if up.kind == "prox":
        if up.center is None:
            raise ConfigError("required for kind 'prox'", field="upper.center", line=_line_of(text, "upper"))
        with _guard("upper.center", text):
            return ProxBifunction(np.array(up.center, dtype=float), up.weight, k)
    a1 = _affine_block(up.a1, "upper.a1", text)
    a2 = _affine_block(up.a2, "upper.a2", text)
    with _guard("upper", text):
        return PairedOperatorBifunction(a1, a2, k, tolerance=up.tolerance, max_inner=up.max_inner)


def build_schedule(cfg: RunConfig, text: str = "") -> Schedule:
    with _guard("schedule", text):
        return Schedule(**asdict(cfg.schedule))


def build_schedule_fn(cfg: RunConfig, lipschitz: float, text: str = "") -> ScheduleFn:
    dyn = cfg.dynamics
    if dyn.discrete_schedule:
        return ScheduleFn.from_discrete(build_schedule(cfg, text), lipschitz)
    params = asdict(dyn)
    params.pop("discrete_schedule")
    with _guard("dynamics", text):
        return ScheduleFn(lipschitz=lipschitz, **params)


def build_stopping_rule(cfg: RunConfig, text: str = "") -> StoppingRule:
    s = cfg.solver
    with _guard("solver", text):
        return StoppingRule(tol_gap=s.tol_gap, tol_step=s.tol_step, max_iter=s.max_iter, exact=s.exact)


def validate_config(cfg: RunConfig, text: str = "") -> None:
    """Check dimensions, enums and the step bound lambda*beta*L < 1."""
    inst, _ = build_problem(cfg, text)
    s = cfg.solver
    if len(s.x0) != inst.dim:
        raise ConfigError(f"x0 has dimension {len(s.x0)}, problem has {inst.dim}",
                          field="solver.x0", line=_line_of(text, "x0"))
    if s.reference is not None and len(s.reference) != inst.dim:
        raise ConfigError(f"reference has dimension {len(s.reference)}, problem has {inst.dim}",
                          field="solver.reference", line=_line_of(text, "reference"))
    if s.method not in METHODS:
        raise ConfigError(f"unknown method {s.method!r}; expected one of {METHODS}",
                          field="solver.method", line=_line_of(text, "method"))
    if not s.step > 0:
        raise ConfigError(f"step must be > 0, got {s.step}", field="solver.step", line=_line_of(text, "step"))
    if not s.t_end > 0:
        raise ConfigError(f"t_end must be > 0, got {s.t_end}", field="solver.t_end", line=_line_of(text, "t_end"))
    if s.oracle_tol is not None and not s.oracle_tol > 0:
        raise ConfigError(f"oracle_tol must be > 0, got {s.oracle_tol}", field="solver.oracle_tol",
                          line=_line_of(text, "oracle_tol"))
    if s.grid < 2 or s.horizon < 1 or s.samples < 1:
        raise ConfigError("grid must be >= 2, horizon and samples >= 1", field="solver",
                          line=_line_of(text, "solver"))
    if cfg.output.format not in FORMATS:
        raise ConfigError(f"unknown format {cfg.output.format!r}; expected one of {FORMATS}",
                          field="output.format", line=_line_of(text, "format"))
    build_stopping_rule(cfg, text)
    sched = build_schedule(cfg, text)
    try:
        validate_schedule(sched, inst.lipschitz, s.max_iter)
    except UsageError as exc:
        raise ConfigError(str(exc), field="schedule", line=_line_of(text, "schedule")) from exc
    sched_fn = build_schedule_fn(cfg, inst.lipschitz, text)
    t = np.arange(0.0, s.t_end + s.step, s.step)
    worst = float(np.max(sched_fn.lam(t) * sched_fn.beta(t))) * inst.lipschitz
    if worst >= 1.0:
        raise ConfigError(f"dynamics schedule violates the step bound lambda*beta*L < 1 "
                          f"(lambda*beta*L = {worst:.6g})", field="dynamics", line=_line_of(text, "dynamics"))
