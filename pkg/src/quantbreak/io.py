"""Dataset CSV, run configuration files and atomic result writing."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .changepoint import SegmentationConstraints
from .core import Dataset, RegressionModel, linear, mono_molecular
from .estimator import FitConfig
from .selection import SelectionConfig
from .simulation import ScenarioSpec

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


class DataFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets

def read_dataset(path) -> Dataset:
    """Read ``x1..xd, y`` columns (header row required) in time order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if "y" not in header:
            raise DataFormatError(f"{path}: missing column 'y'")
        xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                       key=lambda h: int(h[1:]))
        if not xcols:
            raise DataFormatError(f"{path}: missing column 'x1'")
        for j in range(1, len(xcols) + 1):
            if f"x{j}" not in header:
                raise DataFormatError(f"{path}: missing column 'x{j}'")
        xidx = [header.index(c) for c in xcols]
        yidx = header.index("y")
        rows_x, rows_y = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric value") from None
            if not all(np.isfinite(vals)):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            rows_x.append([vals[i] for i in xidx])
            rows_y.append(vals[yidx])
    if not rows_y:
        raise DataFormatError(f"{path}: no observations")
    return Dataset(np.array(rows_x), np.array(rows_y))


def write_dataset(path, data: Dataset):
    lines = [",".join([f"x{j + 1}" for j in range(data.dim_x)] + ["y"])]
    for xi, yi in zip(data.x, data.y):
        lines.append(",".join(repr(float(v)) for v in list(xi) + [yi]))
    atomic_write(path, "\n".join(lines) + "\n")


def model_for(name: str, dim_x: int) -> RegressionModel:
    if name == "linear":
        return linear(dim_x=dim_x)
    if name == "mono_molecular":
        if dim_x != 1:
            raise ConfigError(f"mono_molecular takes one regressor, dataset has {dim_x}")
        return mono_molecular()
    raise ConfigError(f"unknown model {name!r}; known: ['linear', 'mono_molecular']")


# ---------------------------------------------------------------------------
# output

def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps(obj))


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class StudyConfig:
    kind: str = "table"
    k: Optional[int] = None
    methods: tuple[str, ...] = ("quantile", "ls")

    def __post_init__(self):
        if self.kind not in ("table", "selection"):
            raise ConfigError(f"study.kind must be 'table' or 'selection', got {self.kind!r}")
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class RunConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    constraints: SegmentationConstraints = field(default_factory=SegmentationConstraints)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    scenario: Optional[ScenarioSpec] = None


_SECTIONS = {
    "fit": FitConfig,
    "constraints": SegmentationConstraints,
    "selection": SelectionConfig,
    "study": StudyConfig,
    "scenario": ScenarioSpec,
}
_NOT_CONFIGURABLE = {("selection", "penalty")}


def _allowed(section: str) -> set[str]:
    names = {f.name for f in dataclasses.fields(_SECTIONS[section])}
    return {n for n in names if (section, n) not in _NOT_CONFIGURABLE}


def parse_override(text: str) -> tuple[str, Any]:
    """``section.key=value`` with a TOML value; bare words become strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def _flatten(doc: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in doc.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def build_config(values: dict[str, Any]) -> RunConfig:
    """Assemble a RunConfig from flat ``section.key`` values, rejecting unknown keys."""
    grouped: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    for dotted, v in values.items():
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key or "." in key or key not in _allowed(section):
            raise ConfigError(f"unknown configuration key {dotted!r}")
        grouped[section][key] = v
    try:
        parts = {s: _SECTIONS[s](**grouped[s]) for s in ("fit", "constraints", "selection", "study")}
        scenario = ScenarioSpec(**grouped["scenario"]) if grouped["scenario"] else None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(scenario=scenario, **parts)


def resolve_config_path(path) -> Path:
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / p.name).exists():
        return SCENARIO_DIR / p.name
    if not p.exists():
        raise ConfigError(f"configuration file not found: {path}")
    return p


def load_config(path=None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        p = resolve_config_path(path)
        try:
            values = _flatten(tomllib.loads(p.read_text()))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    values.update(overrides or {})
    return build_config(values)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for section in ("fit", "constraints", "selection", "study"):
        obj = getattr(cfg, section)
        out[section] = {n: (list(v) if isinstance(v, tuple) else v)
                        for n in sorted(_allowed(section)) for v in [getattr(obj, n)]}
    if cfg.scenario is not None:
        out["scenario"] = cfg.scenario.to_dict()
    return out
