"""Scenario and design documents.

Both are YAML with a schema tag; unknown fields are rejected so that
config drift fails fast.  Scenario documents describe a design problem;
design documents are self-contained (they carry the model pieces needed
to analyse a completed trial without the scenario).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from .model import AllocationSchedule, AnalysisSchedule, \
    ConstraintViolationError, GroupSequentialDesign, ScenarioSpec, \
    StoppingBoundaries, VarianceComponents

__all__ = [
    "ConfigError",
    "SCENARIO_SCHEMA",
    "DESIGN_SCHEMA",
    "load_scenario",
    "load_design",
    "design_to_dict",
    "save_design",
    "builtin_config_path",
]

SCENARIO_SCHEMA = "swgsd/scenario-v1"
DESIGN_SCHEMA = "swgsd/design-v1"

_SCENARIO_FIELDS = {
    "schema", "C", "T", "m", "alpha", "beta", "delta", "sigma_c2",
    "sigma_e2", "analysis_periods", "weights", "M_SW", "switching_times",
}
_SCENARIO_REQUIRED = {
    "schema", "C", "T", "alpha", "beta", "delta", "sigma_c2", "sigma_e2",
    "analysis_periods",
}
_DESIGN_FIELDS = {
    "schema", "C", "T", "analysis_periods", "m", "switching_times",
    "futility", "efficacy", "sigma_c2", "sigma_e2", "alpha", "summary",
}
_DESIGN_REQUIRED = _DESIGN_FIELDS - {"summary"}


class ConfigError(ValueError):
    """A configuration document failed to parse or validate."""


def _load_document(path, expected_schema, allowed, required):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(
            f"{path}: unknown field(s) {sorted(unknown)}; "
            f"allowed fields are {sorted(allowed)}")
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"{path}: missing required field(s) "
                          f"{sorted(missing)}")
    if raw["schema"] != expected_schema:
        raise ConfigError(
            f"{path}: schema tag {raw['schema']!r} does not match "
            f"{expected_schema!r}")
    return raw


def _int_list(raw, path, name):
    value = raw[name]
    if not isinstance(value, (list, tuple)) \
            or not all(isinstance(v, int) for v in value):
        raise ConfigError(f"{path}: field {name!r} must be a list of integers")
    return tuple(value)


def load_scenario(path) -> ScenarioSpec:
    """Parse and validate a scenario document."""
    raw = _load_document(Path(path), SCENARIO_SCHEMA,
                         _SCENARIO_FIELDS, _SCENARIO_REQUIRED)
    path = Path(path)
    try:
        return ScenarioSpec(
            n_clusters=int(raw["C"]),
            n_periods=int(raw["T"]),
            alpha=float(raw["alpha"]),
            beta=float(raw["beta"]),
            delta=float(raw["delta"]),
            vc=VarianceComponents(float(raw["sigma_c2"]),
                                  float(raw["sigma_e2"])),
            analysis_periods=_int_list(raw, path, "analysis_periods"),
            weights=tuple(float(w) for w in raw.get(
                "weights", (1 / 3, 1 / 3, 1 / 3))),
            m_sw=int(raw["M_SW"]) if "M_SW" in raw else None,
            m=int(raw["m"]) if "m" in raw else None,
            switch_periods=(_int_list(raw, path, "switching_times")
                            if "switching_times" in raw else None),
        )
    except (ConstraintViolationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_design(path) -> GroupSequentialDesign:
    """Parse and validate a self-contained design document."""
    raw = _load_document(Path(path), DESIGN_SCHEMA,
                         _DESIGN_FIELDS, _DESIGN_REQUIRED)
    path = Path(path)
    S = _int_list(raw, path, "switching_times")
    if len(S) != int(raw["C"]):
        raise ConfigError(
            f"{path}: switching_times has {len(S)} entries but C={raw['C']}")
    try:
        return GroupSequentialDesign(
            allocation=AllocationSchedule(S, int(raw["T"])),
            schedule=AnalysisSchedule(_int_list(raw, path,
                                                "analysis_periods")),
            boundaries=StoppingBoundaries(
                tuple(float(b) for b in raw["futility"]),
                tuple(float(b) for b in raw["efficacy"])),
            m=int(raw["m"]),
            vc=VarianceComponents(float(raw["sigma_c2"]),
                                  float(raw["sigma_e2"])),
        )
    except (ConstraintViolationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def design_alpha(path) -> float:
    """The one-sided test level recorded in a design document."""
    raw = _load_document(Path(path), DESIGN_SCHEMA,
                         _DESIGN_FIELDS, _DESIGN_REQUIRED)
    return float(raw["alpha"])


def design_to_dict(design: GroupSequentialDesign, alpha: float,
                   summary: dict | None = None) -> dict:
    doc = {
        "schema": DESIGN_SCHEMA,
        "C": design.n_clusters,
        "T": design.n_periods,
        "analysis_periods": list(design.schedule.periods),
        "m": design.m,
        "switching_times": list(design.allocation.switch_periods),
        "futility": [float(b) for b in design.boundaries.futility],
        "efficacy": [float(b) for b in design.boundaries.efficacy],
        "sigma_c2": design.vc.sigma_c2,
        "sigma_e2": design.vc.sigma_e2,
        "alpha": float(alpha),
    }
    if summary is not None:
        doc["summary"] = summary
    return doc


def save_design(design: GroupSequentialDesign, alpha: float, path,
                summary: dict | None = None):
    Path(path).write_text(yaml.safe_dump(
        design_to_dict(design, alpha, summary), sort_keys=False))


def builtin_config_path(name: str) -> Path:
    """Path to a shipped scenario or design document (e.g. 'tds1',
    'designs/tds1_design1')."""
    root = resources.files("swgsd") / "configs"
    path = root / f"{name}.yaml"
    if not path.is_file():
        available = sorted(
            str(p.relative_to(root))[:-5]
            for p in Path(str(root)).rglob("*.yaml"))
        raise ConfigError(f"no shipped config named {name!r}; "
                          f"available: {available}")
    return Path(str(path))
