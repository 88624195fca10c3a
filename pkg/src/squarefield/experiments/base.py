"""Helpers shared by the experiment runs."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Iterable, Iterator
from contextlib import contextmanager

from squarefield.experiments.models import ExperimentContext, ExperimentInfo
from squarefield.halfspace import Grid, make_grid
from squarefield.report import ExperimentReport, Verdict, check
from squarefield.settings import ConfigError, GridSettings, merge_grid

logger = logging.getLogger(__name__)


def resolve_grid(info: ExperimentInfo, settings: GridSettings) -> Grid | None:
    if info.grid is None:
        return None
    n, ell, nx, t_min, t_max, nt = info.grid
    base = GridSettings(n, ell, nx, t_min, t_max, nt)
    merged = merge_grid(base, settings)
    try:
        return make_grid(merged.n, merged.ell, merged.nx, merged.t_min, merged.t_max, merged.nt)
    except ValueError as e:
        raise ConfigError(f"grid: {e}") from e


@contextmanager
def stage(report: ExperimentReport, name: str) -> Iterator[None]:
    """Record the wall-clock time of a block under report.timings[name]."""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        report.timings[name] = report.timings.get(name, 0.0) + elapsed
        logger.debug("Stage %s took %.3fs", name, elapsed)


def verdict(
    ctx: ExperimentContext, name: str, value: float | None, tolerance: str, relation: str = "<="
) -> Verdict:
    """check() against the named tolerance, informational when the registry says so."""
    return check(
        name,
        value,
        ctx.tolerance(tolerance),
        relation,
        informational=ctx.is_informational(tolerance),
    )


def relative_gap(value: float, target: float) -> float:
    if target == 0:
        return math.inf if value else 0.0
    return abs(value - target) / abs(target)


def finite_max(values: Iterable[float | None]) -> float | None:
    """Largest value, None when any entry is undefined or non-finite, or there are none."""
    values = list(values)
    if not values or any(v is None or not math.isfinite(v) for v in values):
        return None
    return max(values)


def finite_min(values: Iterable[float | None]) -> float | None:
    values = list(values)
    if not values or any(v is None or not math.isfinite(v) for v in values):
        return None
    return min(values)
