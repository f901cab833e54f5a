"""Run configuration: a strict JSON document validated against a schema."""

from __future__ import annotations

import dataclasses
import importlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from ..errors import ConfigurationError
from ..model import BUILTIN_TAGS, ProblemSpec, make_builtin_case

_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "scheme"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "case": {"enum": list(BUILTIN_TAGS)},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"a": {"type": "number"}, "c": {"type": "number"}},
                },
                "factory": {"type": "string", "pattern": r"^[\w.]+:[\w.]+$"},
                "x0": {"type": "number"},
                "T": {"type": "number", "exclusiveMinimum": 0},
            },
            "oneOf": [{"required": ["case"], "not": {"required": ["factory"]}}, {"required": ["factory"], "not": {"required": ["case"]}}],
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "I", "M", "L", "seed"],
            "properties": {
                "N": _POS_INT,
                "I": _POS_INT,
                "M": _POS_INT,
                "L": _POS_INT,
                "depth_cap": _POS_INT,
                "pilot_size": _POS_INT,
                "holdout_M": _POS_INT,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "C0": {
                    "oneOf": [
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["mode", "value"],
                            "properties": {"mode": {"const": "fixed"}, "value": {"type": "number", "exclusiveMinimum": 0}},
                        },
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["mode"],
                            "properties": {"mode": {"const": "pilot"}, "safety": {"type": "number", "exclusiveMinimum": 0}},
                        },
                    ]
                },
                "picard_beta": {"enum": ["refit", "freeze"]},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "string"} for k in ("paths", "report", "summary", "diagnostics", "convergence")},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "levels"],
            "properties": {
                "axis": {"enum": ["N", "M", "L"]},
                "levels": {"type": "array", "items": _POS_INT, "minItems": 1},
                "replicates": _POS_INT,
            },
        },
    },
}

DEFAULT_PILOT_SIZE = 100_000


@dataclass(frozen=True)
class RunConfig:
    problem: dict
    N: int
    I: int
    M: int
    L: int
    seed: int
    depth_cap: int | None = None
    pilot_size: int = DEFAULT_PILOT_SIZE
    holdout_M: int | None = None
    C0: dict = field(default_factory=lambda: {"mode": "pilot", "safety": 4.0})
    picard_beta: str = "refit"
    outputs: dict = field(default_factory=dict)
    sweep: dict | None = None

    @property
    def case_tag(self) -> str | None:
        return self.problem.get("case")

    def build_problem(self):
        """Return ``(spec, case)``; ``case`` is None for factory problems."""
        x0 = self.problem.get("x0", 1.0)
        T = self.problem.get("T", 1.0)
        if "case" in self.problem:
            return make_builtin_case(self.problem["case"], self.problem.get("params"), x0=x0, T=T)
        mod, _, attr = self.problem["factory"].partition(":")
        try:
            obj = importlib.import_module(mod)
            for part in attr.split("."):
                obj = getattr(obj, part)
        except (ImportError, AttributeError) as exc:
            raise ConfigurationError(f"cannot load problem factory {self.problem['factory']!r}: {exc}") from exc
        spec = obj()
        if not isinstance(spec, ProblemSpec):
            raise ConfigurationError("problem factory must return a ProblemSpec")
        if "x0" in self.problem or "T" in self.problem:
            spec = dataclasses.replace(spec, x0=float(x0), T=float(T))
        return spec, None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_case(self, tag: str) -> "RunConfig":
        problem = {k: v for k, v in self.problem.items() if k in ("x0", "T")}
        problem["case"] = tag
        if self.case_tag == tag and "params" in self.problem:
            problem["params"] = self.problem["params"]
        return self.replace(problem=problem)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def config_from_dict(doc) -> RunConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigurationError(f"invalid config at {_pointer(err.absolute_path)}: {err.message}")
    scheme = dict(doc["scheme"])
    if "depth_cap" in scheme and scheme["depth_cap"] > scheme["N"]:
        raise ConfigurationError(f"invalid config at /scheme/depth_cap: must not exceed N={scheme['N']}")
    sweep = doc.get("sweep")
    if sweep is not None:
        lv = sweep["levels"]
        pairs = list(zip(lv, lv[1:]))
        if not (all(b > a for a, b in pairs) or all(b < a for a, b in pairs)):
            raise ConfigurationError("invalid config at /sweep/levels: levels must be strictly monotone")
    C0 = dict(scheme.pop("C0", {"mode": "pilot"}))
    if C0["mode"] == "pilot":
        C0.setdefault("safety", 4.0)
    return RunConfig(problem=dict(doc["problem"]), C0=C0, outputs=dict(doc.get("outputs", {})), sweep=sweep, **scheme)


def parse_config(source) -> RunConfig:
    """Parse a config from a path, a JSON string or an already-loaded dict."""
    if isinstance(source, dict):
        return config_from_dict(source)
    text = str(source)
    if not text.lstrip().startswith("{"):
        try:
            text = Path(text).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {source!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
