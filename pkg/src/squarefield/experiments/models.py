"""Shared models for the experiment registry."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from typing import Any

from squarefield.halfspace import Grid
from squarefield.report import ExperimentReport
from squarefield.services.runner import RowRunner
from squarefield.settings import ExperimentConfig

GridTuple = tuple[int, float, int, float, float, int]  # n, ell, nx, t_min, t_max, nt


@dataclass(frozen=True, eq=False)
class ExperimentInfo:
    """A registered experiment: defaults, frozen tolerances and the function that runs it."""

    key: str
    label: str
    description: str
    grid: GridTuple | None  # None: the experiment builds its grids per scale
    defaults: dict[str, Any]
    tolerances: dict[str, float]
    informational: tuple[str, ...]  # tolerances reported but never failing
    execute: Callable[[ExperimentContext], ExperimentReport] = field(repr=False)


@dataclass
class ExperimentContext:
    info: ExperimentInfo
    config: ExperimentConfig
    grid: Grid | None
    runner: RowRunner
    tolerances: dict[str, float]

    def param(self, name: str) -> Any:
        """Run-settings value, or the experiment default when unset."""
        value = getattr(self.config.run, name)
        return self.info.defaults.get(name) if value is None else value

    def tolerance(self, name: str) -> float:
        return self.tolerances[name]

    def is_informational(self, name: str) -> bool:
        return name in self.info.informational

    def config_echo(self) -> dict[str, Any]:
        """Everything that determines the results; worker count and output options excluded."""
        run = self.config.run
        echo: dict[str, Any] = {"experiment": self.info.key}
        if self.grid is not None:
            echo["grid"] = asdict(self.grid)
        echo["seed"] = run.seed
        for name in ("p_values", "scales", "operator", "weight", "family", "corpus_size"):
            value = self.param(name)
            if value is not None:
                echo[name] = value
        echo["tolerances"] = dict(self.tolerances)
        return echo

    def new_report(self, columns: list[str]) -> ExperimentReport:
        return ExperimentReport(self.info.key, self.config_echo(), list(columns))
