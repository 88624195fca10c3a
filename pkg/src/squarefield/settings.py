"""Experiment configuration: dataclass sections, a JSON config file, and flag overrides."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json")
_GRID_KEYS = {
    "n": "n",
    "l": "ell",
    "ell": "ell",
    "nx": "nx",
    "tmin": "t_min",
    "tmax": "t_max",
    "nt": "nt",
}


class ConfigError(ValueError):
    """Raised for a malformed or inconsistent experiment configuration."""


@dataclass
class GridSettings:
    """None means the experiment's default for that parameter."""

    n: int | None = None
    ell: float | None = None
    nx: int | None = None
    t_min: float | None = None
    t_max: float | None = None
    nt: int | None = None


@dataclass
class RunSettings:
    seed: int = 0
    p_values: list[float] | None = None
    scales: list[float] | None = None  # N values for the counterexample families
    # identity, smooth-scalar, checkerboard, complex-perturbed or file:<path>
    operator: str | None = None
    weight: str | None = None  # unit, power(a), plateau(c)
    family: str | None = None  # lower, upper
    corpus_size: int | None = None
    workers: int = 1
    tolerances: dict[str, float] = field(default_factory=dict)


@dataclass
class OutputSettings:
    path: str | None = None  # None writes to stdout
    format: str = "csv"  # csv, json
    timings: bool = False


@dataclass
class ExperimentConfig:
    experiment: str = ""
    grid: GridSettings = field(default_factory=GridSettings)
    run: RunSettings = field(default_factory=RunSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def validate(self) -> ExperimentConfig:
        if self.output.format not in FORMATS:
            choices = ", ".join(FORMATS)
            raise ConfigError(f"format must be one of {choices}, got {self.output.format}")
        if self.run.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.run.workers}")
        if self.run.corpus_size is not None and self.run.corpus_size < 1:
            raise ConfigError(f"corpus_size must be at least 1, got {self.run.corpus_size}")
        if self.run.p_values is not None and any(not p > 0 for p in self.run.p_values):
            raise ConfigError(f"p values must be positive, got {self.run.p_values}")
        if self.run.scales is not None and any(not s > 0 for s in self.run.scales):
            raise ConfigError(f"N values must be positive, got {self.run.scales}")
        return self


def _section(cls: type, data: object, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = sorted(set(data) - set(cls.__dataclass_fields__))
    if unknown:
        logger.warning("Ignoring unknown keys in %s: %s", name, ", ".join(unknown))
    try:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
    except TypeError as e:
        raise ConfigError(f"config section {name!r}: {e}") from e


def _dict_to_config(data: dict) -> ExperimentConfig:
    """Convert a dictionary to an ExperimentConfig, filling in defaults for missing keys."""
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return ExperimentConfig(
        experiment=str(data.get("experiment", "")),
        grid=_section(GridSettings, data.get("grid"), "grid"),
        run=_section(RunSettings, data.get("run"), "run"),
        output=_section(OutputSettings, data.get("output"), "output"),
    )


def load_config(path: Path) -> ExperimentConfig:
    """Load a config file; unlike UI settings, a broken file is an error."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return _dict_to_config(data)


def save_config(config: ExperimentConfig, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(config), indent=2), encoding="utf-8")


def parse_grid_flag(text: str, base: GridSettings | None = None) -> GridSettings:
    """Parse ``n=1,nx=256,nt=64,l=8,tmin=0.01,tmax=8`` over base."""
    grid = replace(base) if base is not None else GridSettings()
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip().lower()
        if not sep or key not in _GRID_KEYS:
            raise ConfigError(f"bad --grid entry {part!r}; keys are n, nx, nt, l, tmin, tmax")
        name = _GRID_KEYS[key]
        try:
            parsed = int(value) if name in ("n", "nx", "nt") else float(value)
        except ValueError as e:
            raise ConfigError(f"--grid {key} needs a number, got {value!r}") from e
        setattr(grid, name, parsed)
    return grid


def parse_number_list(text: str, flag: str) -> list[float]:
    """Parse ``0.5,1,1.5`` (``1/2`` is accepted for fractions)."""
    values = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        try:
            num, _, den = part.partition("/")
            values.append(float(num) / float(den) if den else float(num))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"{flag} needs numbers, got {part!r}") from e
    if not values:
        raise ConfigError(f"{flag} needs at least one value")
    return values


def merge_grid(base: GridSettings, override: GridSettings) -> GridSettings:
    """Fields set in override win."""
    merged = replace(base)
    for f in fields(GridSettings):
        value = getattr(override, f.name)
        if value is not None:
            setattr(merged, f.name, value)
    return merged
