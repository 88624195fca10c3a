"""Explicit field families showing that the converse L1 square-function comparisons fail.

lower: f_N(x, t) = t chi_{B(0,1)}(x) chi_[0,1](t/N) / N, for which ||S~ f_N||_p^p grows like
       N^{n(1-p)} against a fixed ||V~ f_N||_p^p when p < 1.
upper: f_N(x, t) = t v(B(x,t)) chi_{B(0,1/N)}(x) chi_[0,1](t), for which the ratio decays
       like N^{-n(p-1)} when p > 1.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from squarefield.halfspace import Grid, HalfSpaceField, make_grid, sample_field
from squarefield.services.runner import RowRunner
from squarefield.squarefns import S_TILDE, V_TILDE, apply_squarefn, lp_norm

logger = logging.getLogger(__name__)

CELLS_PER_UNIT = 8
NODES_PER_OCTAVE = 8


class FamilyError(ValueError):
    """Raised when a family's scale, exponent or grid violates its preconditions."""


class Family(Enum):
    LOWER = "lower"
    UPPER = "upper"

    def expected_slope(self, n: int, p: float) -> float:
        return n * (1 - p) if self is Family.LOWER else -n * (p - 1)


def _next_power_of_two(x: float) -> int:
    return 1 << max(3, math.ceil(math.log2(x) - 1e-12))


def family_grid(family: Family | str, N: float, n: int = 1) -> Grid:
    """Per-N grid with fixed resolution.

    lower: ell = 4N, h = 1/8, times in (0, 2N]; upper: ell = 8, h = 1/(8N), times in (0, 2].
    The time range spans enough octaves to reach below h/2, with 8 nodes per octave.
    """
    family = Family(family)
    if not N > 0:
        raise FamilyError(f"N must be positive, got {N}")
    if family is Family.LOWER:
        ell, h_target, t_max = 4.0 * N, 1.0 / CELLS_PER_UNIT, 2.0 * N
    else:
        ell, h_target, t_max = 8.0, 1.0 / (CELLS_PER_UNIT * N), 2.0
    nx = _next_power_of_two(ell / h_target)
    octaves = math.ceil(math.log2(2 * t_max / h_target) - 1e-12)
    return make_grid(n, ell, nx, t_max / 2**octaves, t_max, NODES_PER_OCTAVE * octaves)


@dataclass(frozen=True)
class FamilySpec:
    family: Family
    N: float
    grid: Grid

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        grid = self.grid
        if self.family is Family.LOWER:
            if not self.N > 8:
                raise FamilyError(f"the lower family needs N > 8, got {self.N}")
            if grid.t_max < self.N:
                raise FamilyError(f"t_max = {grid.t_max} must reach N = {self.N}")
            if grid.ell / 2 < self.N / 4:
                raise FamilyError(f"spatial extent {grid.ell} is too small for N = {self.N}")
        else:
            if not self.N > 0:
                raise FamilyError(f"N must be positive, got {self.N}")
            if grid.h > 1 / (2 * self.N):
                raise FamilyError(f"h = {grid.h} must not exceed 1/(2N) = {1 / (2 * self.N)}")
            if grid.t_max < 1:
                raise FamilyError(f"t_max = {grid.t_max} must reach 1")

    @classmethod
    def create(cls, family: Family | str, N: float, n: int = 1) -> FamilySpec:
        return cls(Family(family), N, family_grid(family, N, n))


def build_family(spec: FamilySpec) -> HalfSpaceField:
    """Sample f_N at cell centers; indicator balls are open, matching cone membership."""
    grid, N = spec.grid, spec.N
    if spec.family is Family.LOWER:
        # 1/N replaced by 1 / sum_{t_k <= N} dt_k so that V~ f_N is exactly the indicator
        effective = float(grid.dt[grid.times <= N].sum())
        if effective <= 0:
            raise FamilyError(f"no time node below N = {N}")

        def closure(y: np.ndarray, t: np.ndarray) -> np.ndarray:
            inside = (y**2).sum(axis=0) < 1.0
            return np.where(inside & (t <= N), t / effective, 0.0)

    else:
        b = grid.unit_ball_volume
        radius_sq = 1.0 / (N * N)

        def closure(y: np.ndarray, t: np.ndarray) -> np.ndarray:
            inside = (y**2).sum(axis=0) < radius_sq
            return np.where(inside & (t <= 1.0), t * b * t**grid.n, 0.0)

    return sample_field(closure, grid)


@dataclass(frozen=True)
class ScanRow:
    family: str
    n: int
    p: float
    N: float
    norm_s_tilde: float  # ||S~ f_N||_p^p
    norm_v_tilde: float  # ||V~ f_N||_p^p
    ratio: float


@dataclass(frozen=True)
class ScanRecord:
    family: Family
    n: int
    p: float
    rows: tuple[ScanRow, ...]
    slope: float | None  # None with a single N
    expected_slope: float

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(row.ratio for row in self.rows)


def _check_exponent(family: Family, p: float) -> None:
    if family is Family.LOWER and not 0 < p < 1:
        raise FamilyError(f"the lower family needs 0 < p < 1, got {p}")
    if family is Family.UPPER and not p > 1:
        raise FamilyError(f"the upper family needs p > 1, got {p}")


def fit_slope(scales: Sequence[float], ratios: Sequence[float]) -> float | None:
    """Least-squares slope of log ratio against log N, smallest N dropped from three up."""
    pairs = sorted(zip(scales, ratios))
    if len(pairs) >= 3:
        pairs = pairs[1:]
    if len(pairs) < 2:
        return None
    x = np.log([s for s, _ in pairs])
    y = np.log([r for _, r in pairs])
    return float(np.polyfit(x, y, 1)[0])


def _scan_row(family: Family, p: float, N: float, n: int) -> ScanRow:
    spec = FamilySpec.create(family, N, n)
    field = build_family(spec)
    norm_s = lp_norm(apply_squarefn(S_TILDE, field), p) ** p
    norm_v = lp_norm(apply_squarefn(V_TILDE, field), p) ** p
    if not (norm_s > 0 and norm_v > 0):
        raise FamilyError(f"{family.value} family at N = {N} produced a vanishing norm")
    logger.debug("%s N=%g: S~=%.6g V~=%.6g", family.value, N, norm_s, norm_v)
    return ScanRow(family.value, n, p, float(N), norm_s, norm_v, norm_s / norm_v)


def ratio_scan(
    family: Family | str,
    p: float,
    N_list: Sequence[float],
    n: int = 1,
    runner: RowRunner | None = None,
) -> ScanRecord:
    """Ratios ||S~ f_N||_p^p / ||V~ f_N||_p^p over N_list with the fitted log-log slope."""
    family = Family(family)
    _check_exponent(family, p)
    if not N_list:
        raise FamilyError("N list is empty")
    runner = runner or RowRunner(1)
    rows = runner.map(lambda N: _scan_row(family, p, N, n), list(N_list))
    slope = fit_slope([row.N for row in rows], [row.ratio for row in rows])
    if slope is None:
        logger.warning("Slope undefined for a single N")
    return ScanRecord(family, n, p, tuple(rows), slope, family.expected_slope(n, p))
