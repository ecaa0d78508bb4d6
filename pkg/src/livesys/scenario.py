"""Scenario files: JSON schema, loading and construction of the runnable objects.

A scenario is either a general OMAS of linear agents (``omas.kind ==
"linear"``) or the cascade case study (``omas.kind == "cascade"``). Both
share the ``meta``, ``schedule``, ``checks``, ``lyapunov`` and ``output``
sections; the schema rejects unknown keys everywhere.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import jsonschema
import numpy as np

from . import comparison as cf
from .core_state import LiveState
from .errors import ScenarioError
from .example_cascade import CascadeScenario
from .flow_engine import ImpulseSchedule, LiveSystemDefinition, ScheduleSpec
from .omas import LinearAgent, OmasDefinition, compile
from .signals import (Affine, Channel, Constant, ExpDecay, InputSignal, arrival_signal)

CHECKS = ("iss", "brs", "uls", "uag", "ulim", "ciucs", "gadt", "lyapunov", "axioms",
          "certificate", "hierarchy")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_ID = "^[0-9]+$"
_FN = {"type": "object", "required": ["id"]}
_PAIRS = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}

_PIECE = {
    "type": "object", "additionalProperties": False, "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "affine", "exp"]},
        "start": {"type": "number", "minimum": 0},
        "value": _VEC, "offset": _VEC, "slope": _VEC, "amplitude": _VEC,
        "rate": {"type": "number", "minimum": 0},
    },
}
_CHANNEL = {"type": "array", "items": _PIECE, "minItems": 1}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["meta", "omas", "schedule"],
    "properties": {
        "meta": {
            "type": "object", "additionalProperties": False, "required": ["name", "horizon"],
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "description": {"type": "string"},
                "seed": {"type": "integer", "minimum": 0},
                "horizon": _POS,
                "step": _POS,
                "escape": _POS,
            },
        },
        "omas": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["linear", "cascade"]}},
            "oneOf": [
                {
                    "additionalProperties": False,
                    "required": ["kind", "initial"],
                    "properties": {
                        "kind": {"const": "linear"},
                        "agents": {"type": "object", "additionalProperties": False,
                                   "patternProperties": {_ID: {
                                       "type": "object", "additionalProperties": False,
                                       "required": ["A"],
                                       "properties": {"A": _MAT, "B": _MAT}}}},
                        "default_agent": {"type": "object", "additionalProperties": False,
                                          "required": ["A"], "properties": {"A": _MAT}},
                        "initial": {"type": "object", "additionalProperties": False,
                                    "minProperties": 1, "patternProperties": {_ID: _VEC}},
                    },
                },
                {
                    "additionalProperties": False,
                    "required": ["kind", "A"],
                    "properties": {
                        "kind": {"const": "cascade"},
                        "A": _MAT,
                        "epsilon": _POS,
                        "x0": _VEC,
                        "z0": _NUM,
                        "direction": _VEC,
                        "magnitudes": {"oneOf": [{"enum": ["unit", "halving"]},
                                                 {"type": "array", "items": _NUM}]},
                        "engine": {"enum": ["agents", "pool"]},
                        "divergence_threshold": _POS,
                    },
                },
            ],
        },
        "schedule": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["explicit", "periodic", "log-shrinking"]},
                "period": _POS,
                "first": _POS,
                "times": {"type": "array", "items": _POS},
                "arrivals": {"type": "object", "additionalProperties": False,
                             "patternProperties": {_ID: {"type": "array",
                                                         "items": {"type": "integer", "minimum": 0}}}},
                "departures": {"type": "object", "additionalProperties": False,
                               "patternProperties": {_ID: {"type": "array",
                                                           "items": {"type": "integer", "minimum": 0}}}},
            },
        },
        "signals": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "arrivals": {"type": "object", "additionalProperties": False,
                             "patternProperties": {_ID: {
                                 "type": "object", "additionalProperties": False,
                                 "required": ["t", "value"],
                                 "properties": {"t": {"type": "number", "minimum": 0},
                                                "value": _VEC}}}},
                "hold": _POS,
                "channels": {"type": "object", "additionalProperties": False,
                             "patternProperties": {_ID: _CHANNEL}},
                "default": _CHANNEL,
            },
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["check"],
                "properties": {
                    "check": {"enum": list(CHECKS)},
                    "gains": {"enum": ["lyapunov", "explicit"]},
                    "beta": _FN, "gamma": _FN, "sigma": _FN, "bound": _FN,
                    "tol": {"type": "number", "minimum": 0},
                    "r": _POS,
                    "pairs": _PAIRS,
                    "groups": _PAIRS,
                    "radii": {"type": "array", "items": _POS, "minItems": 1},
                    "eps": _POS,
                    "samples": {"type": "integer", "minimum": 1},
                    "horizon": _POS,
                    "step": _POS,
                    "grid": {"type": "integer", "minimum": 2},
                    "runs": {"type": "integer", "minimum": 1},
                    "x0_max": {"type": "number", "minimum": 0},
                    "u_max": {"type": "number", "minimum": 0},
                    "seed": {"type": "integer", "minimum": 0},
                    "flow_tol": _POS,
                },
            },
        },
        "lyapunov": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"const": "quadratic"},
                "P": _MAT,
                "epsilon": _POS,
                "c": _POS,
                "d": _NUM,
                "h": {"type": "object", "additionalProperties": False, "required": ["a", "rate"],
                      "properties": {"a": _POS, "rate": _POS}},
                "gadt_horizon": _POS,
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"csv": {"type": "string"}, "report": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class Scenario:
    """A validated scenario document with its hash and helpers to build runnable parts."""

    doc: Dict[str, Any]
    sha256: str
    source: str

    @property
    def name(self) -> str:
        return self.doc["meta"]["name"]

    @property
    def kind(self) -> str:
        return self.doc["omas"]["kind"]

    @property
    def horizon(self) -> float:
        return float(self.doc["meta"]["horizon"])

    @property
    def step(self) -> float:
        return float(self.doc["meta"].get("step", 1e-3))

    @property
    def seed(self) -> int:
        return int(self.doc["meta"].get("seed", 0))

    @property
    def escape(self) -> Optional[float]:
        return self.doc["meta"].get("escape")

    def check_params(self, name: str) -> List[Dict[str, Any]]:
        """Every invocation of check ``name`` in the file (one empty set when absent)."""
        found = [dict(c) for c in self.doc.get("checks", []) if c["check"] == name]
        return found or [{"check": name}]

    def schedule_spec(self) -> ScheduleSpec:
        s = self.doc["schedule"]
        return ScheduleSpec(s["kind"], float(s.get("period", 1.0)), s.get("first"),
                            tuple(s.get("times", ())))

    def schedule(self, horizon: Optional[float] = None) -> ImpulseSchedule:
        return self.schedule_spec().build(self.horizon if horizon is None else horizon)


def _format_error(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{path}: {err.message}"


def parse(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate a scenario document.

    Raises
    ------
    ScenarioError
        With line/column for JSON syntax errors and field paths for schema errors.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        detail = "; ".join(_format_error(e) for e in errors[:10])
        raise ScenarioError(f"{source}: schema violation: {detail}")
    _semantic_checks(doc, source)
    return Scenario(doc, hashlib.sha256(text.encode("utf-8")).hexdigest(), source)


def _semantic_checks(doc: Dict[str, Any], source: str) -> None:
    s = doc["schedule"]
    if s["kind"] == "explicit" and "times" not in s:
        raise ScenarioError(f"{source}: schedule: explicit schedules need 'times'")
    if doc["omas"]["kind"] == "cascade" and (s.get("arrivals") or s.get("departures")):
        raise ScenarioError(f"{source}: schedule: the cascade adds one agent per impulse; "
                            f"arrivals/departures are implicit")


BUILTIN_DIR = "scenarios"


def builtin_names() -> Tuple[str, ...]:
    files = resources.files("livesys").joinpath(BUILTIN_DIR)
    return tuple(sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json")))


def load(ref: str) -> Scenario:
    """Load a scenario from a file path or by built-in name."""
    path = Path(ref)
    if path.is_file():
        return parse(path.read_text(encoding="utf-8"), str(path))
    if ref in builtin_names():
        res = resources.files("livesys").joinpath(BUILTIN_DIR, ref + ".json")
        return parse(res.read_text(encoding="utf-8"), f"builtin:{ref}")
    raise ScenarioError(f"no scenario file or built-in named {ref!r}")


# --- construction -----------------------------------------------------------------------


def _piece(p: Dict[str, Any]):
    start = float(p.get("start", 0.0))
    kind = p["kind"]
    if kind == "constant":
        return start, Constant(p["value"])
    if kind == "affine":
        return start, Affine(p["offset"], p["slope"], start)
    return start, ExpDecay(p["amplitude"], float(p.get("rate", 0.0)), start)


def _channel(pieces: List[Dict[str, Any]]) -> Channel:
    parts = sorted((_piece(p) for p in pieces), key=lambda x: x[0])
    if parts[0][0] != 0.0:
        raise ScenarioError("signals: every channel must start at t = 0")
    return Channel.piecewise(parts)


def build_signal(scn: Scenario, arrival_values: Optional[Dict[int, np.ndarray]] = None) -> InputSignal:
    """Input of a linear scenario; ``arrival_values`` overrides the arrival vectors."""
    sig = scn.doc.get("signals", {})
    extra = {int(k): _channel(v) for k, v in sig.get("channels", {}).items()}
    arr = {}
    for k, a in sig.get("arrivals", {}).items():
        v = a["value"] if arrival_values is None or int(k) not in arrival_values else arrival_values[int(k)]
        arr[int(k)] = (float(a["t"]), v)
    u = arrival_signal(arr, float(sig.get("hold", 1.0)), extra)
    if "default" in sig:
        u = InputSignal(u.channels, _channel(sig["default"]))
    return u


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Compiled linear OMAS scenario."""

    omas: OmasDefinition
    system: LiveSystemDefinition
    schedule: ImpulseSchedule
    x0: LiveState
    u: InputSignal
    agent_matrix: Optional[np.ndarray] = None
    arrival_agents: Dict[int, float] = field(default_factory=dict)


def build_omas(scn: Scenario, escape: Optional[float] = None) -> OmasDefinition:
    o = scn.doc["omas"]
    s = scn.doc["schedule"]
    agents = {int(k): LinearAgent(v["A"], v.get("B")) for k, v in o.get("agents", {}).items()}
    default = LinearAgent(o["default_agent"]["A"]) if "default_agent" in o else None
    kwargs = {}
    esc = escape if escape is not None else scn.escape
    if esc is not None:
        kwargs["escape_threshold"] = float(esc)
    return OmasDefinition(agents, {int(k) for k in o["initial"]},
                          {int(k): set(v) for k, v in s.get("arrivals", {}).items()},
                          {int(k): set(v) for k, v in s.get("departures", {}).items()},
                          default_agent=default, **kwargs)


def build_linear(scn: Scenario, escape: Optional[float] = None) -> LinearModel:
    if scn.kind != "linear":
        raise ScenarioError(f"{scn.source}: not a linear scenario")
    omas = build_omas(scn, escape)
    sched = scn.schedule()
    system = compile(omas, sched)
    cfg0 = omas.configuration(omas.initial)
    x0 = LiveState.from_blocks(cfg0, {int(k): v for k, v in scn.doc["omas"]["initial"].items()})
    mats = {id(omas.spec(a)): omas.spec(a).A for cid in system.configurations
            for a in system.configurations[cid].agents}
    shared = None
    mlist = list(mats.values())
    if mlist and all(m.shape == mlist[0].shape and np.array_equal(m, mlist[0]) for m in mlist):
        shared = mlist[0]
    arrivals = {int(k): float(a["t"]) for k, a in scn.doc.get("signals", {}).get("arrivals", {}).items()}
    return LinearModel(omas, system, sched, x0, build_signal(scn), shared, arrivals)


def cascade_scenario(scn: Scenario, escape: Optional[float] = None) -> CascadeScenario:
    """Case-study parameters of a cascade scenario."""
    if scn.kind != "cascade":
        raise ScenarioError(f"{scn.source}: not a cascade scenario")
    o = scn.doc["omas"]
    ly = scn.doc.get("lyapunov", {})
    mags = o.get("magnitudes", "unit")
    h = ly.get("h", {"a": math.e, "rate": 1.0})
    kwargs = dict(
        epsilon=float(o.get("epsilon", ly.get("epsilon", 1.0))),
        magnitudes=tuple(mags) if isinstance(mags, list) else (),
        halving=mags == "halving",
        direction=o.get("direction"),
        x0=o.get("x0"),
        z0=float(o.get("z0", 0.0)),
        step=scn.step,
        budget=(float(h["a"]), float(h["rate"])),
        engine=o.get("engine", "agents"),
        divergence_threshold=float(o.get("divergence_threshold", 1e3)),
        gadt_horizon=ly.get("gadt_horizon"),
        seed=scn.seed,
    )
    esc = escape if escape is not None else scn.escape
    if esc is not None:
        kwargs["escape"] = float(esc)
    return CascadeScenario(scn.name, np.asarray(o["A"], dtype=float), scn.schedule_spec(),
                           scn.horizon, **kwargs)


def comparison(d: Optional[Dict[str, Any]], what: str) -> cf.ComparisonFunction:
    if d is None:
        raise ScenarioError(f"check parameter {what!r} is required")
    try:
        return cf.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad comparison function for {what!r}: {exc}") from None
