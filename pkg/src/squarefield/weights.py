"""Muckenhoupt and reverse-Hoelder characteristics on the torus lattice, and weighted comparisons.

Characteristics are suprema over all cell-centered balls with dyadic radii h, 2h, ..., ell/2.
"""

from __future__ import annotations

import logging
import math
import re
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from squarefield.halfspace import (
    Grid,
    HalfSpaceField,
    SpatialFunction,
    ball_count,
    ball_sums,
    sample_function,
)
from squarefield.squarefns import (
    S,
    S_TILDE,
    V,
    V_TILDE,
    apply_squarefn,
    dyadic_radii,
    lp_norm,
    maximal_function,
)

logger = logging.getLogger(__name__)

_PRESET = re.compile(r"^\s*(unit|power|plateau)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


class WeightError(ValueError):
    """Raised for non-positive weights or exponents outside a characteristic's range."""


@dataclass(frozen=True, eq=False)
class Weight:
    """A strictly positive spatial function with memoized characteristics."""

    function: SpatialFunction
    name: str = "custom"
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self) -> None:
        values = self.function.values
        if np.iscomplexobj(values):
            raise WeightError("weights must be real")
        if not values.min() > 0:
            raise WeightError(f"weights must be strictly positive, got min {values.min()}")

    @property
    def grid(self) -> Grid:
        return self.function.grid

    @property
    def values(self) -> np.ndarray:
        return self.function.values

    def scaled(self, c: float) -> Weight:
        return Weight(SpatialFunction(self.grid, c * self.values), f"{c}*{self.name}")

    def _memo(self, key: tuple, compute) -> float:
        with self._lock:
            if key not in self._cache:
                self._cache[key] = compute()
            return self._cache[key]


def weight_preset(spec: str, grid: Grid) -> Weight:
    """Named weights.

    ``unit``; ``power(a)`` = max(|x|, h)^a; ``plateau(c)`` = 1 for x_1 < 0 and c elsewhere.
    """
    match = _PRESET.match(spec)
    if not match:
        raise WeightError(f"Unknown weight preset: {spec}")
    kind, arg = match.group(1), match.group(2)
    if kind == "unit":
        if arg:
            raise WeightError("unit takes no argument")
        return Weight(sample_function(lambda x: 1.0, grid), "unit")
    try:
        value = float(arg)
    except (TypeError, ValueError) as e:
        raise WeightError(f"{kind} needs a numeric argument, got {arg!r}") from e
    if not math.isfinite(value):
        raise WeightError(f"{kind} argument must be finite, got {value}")
    if kind == "power":
        h = grid.h
        closure = lambda x: np.maximum(np.sqrt((x**2).sum(axis=0)), h) ** value  # noqa: E731
        return Weight(sample_function(closure, grid), f"power({value:g})")
    if value <= 0:
        raise WeightError(f"plateau level must be positive, got {value}")
    plateau = sample_function(lambda x: np.where(x[0] < 0, 1.0, value), grid)
    return Weight(plateau, f"plateau({value:g})")


def _ball_averages(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    return ball_sums(values, grid, radius) / ball_count(grid, radius)


def _ball_maxima(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    reach = math.ceil(radius / grid.h)
    offsets = np.arange(-reach, reach + 1)
    mesh = np.meshgrid(*([offsets] * grid.n), indexing="ij")
    footprint = sum(o * o for o in mesh) * grid.h**2 < radius * radius
    return ndimage.maximum_filter(values, footprint=footprint, mode="wrap")


def ap_characteristic(w: Weight, p: float) -> float:
    """[w]_{A_p} over the dyadic ball family; p = 1 uses max Mw / w."""
    if not p >= 1:
        raise WeightError(f"A_p needs p >= 1, got {p}")

    def compute() -> float:
        values = w.values
        if p == 1:
            return float(np.max(maximal_function(w.function).values / values))
        dual = values ** (-1.0 / (p - 1))
        best = 1.0
        for r in dyadic_radii(w.grid):
            char = _ball_averages(values, w.grid, r) * _ball_averages(dual, w.grid, r) ** (p - 1)
            best = max(best, float(char.max()))
        return best

    value = w._memo(("A", float(p)), compute)
    logger.debug("[%s]_A_%g = %.6g", w.name, p, value)
    return value


def rh_characteristic(w: Weight, q: float) -> float:
    """[w]_{RH_q} over the dyadic ball family; q = inf compares ball maxima with averages."""
    if not q > 1:
        raise WeightError(f"RH_q needs q > 1, got {q}")

    def compute() -> float:
        values = w.values
        best = 1.0
        for r in dyadic_radii(w.grid):
            averages = _ball_averages(values, w.grid, r)
            if math.isinf(q):
                top = _ball_maxima(values, w.grid, r)
            else:
                top = _ball_averages(values**q, w.grid, r) ** (1.0 / q)
            best = max(best, float((top / averages).max()))
        return best

    value = w._memo(("RH", float(q)), compute)
    logger.debug("[%s]_RH_%g = %.6g", w.name, q, value)
    return value


@dataclass(frozen=True)
class WeightedComparisonRecord:
    kind: str  # squared, L1
    p: float
    weight: str
    norm_s: float
    norm_v: float
    ratio: float | None  # ||SF|| / ||VF||; None when ||VF|| vanishes
    characteristic: str | None  # e.g. "A_2", "RH_4"; None at the endpoint exponent
    characteristic_value: float | None


def _relevant_characteristic(w: Weight, p: float, kind: str) -> tuple[str | None, float | None]:
    # squared: A_{p/2} above 2, RH_{(2/p)'} below; L1: A_p above 1, RH_{(1/p)'} below
    pivot = 2.0 if kind == "squared" else 1.0
    if p > pivot:
        exponent = p / pivot
        return f"A_{exponent:g}", ap_characteristic(w, exponent)
    if p < pivot:
        exponent = pivot / (pivot - p)
        return f"RH_{exponent:g}", rh_characteristic(w, exponent)
    return None, None


def weighted_compare(
    F: HalfSpaceField, p: float, w: Weight, kind: str = "squared"
) -> WeightedComparisonRecord:
    """||SF||_{L^p(w)} against ||VF||_{L^p(w)} next to the characteristic governing the bound."""
    if kind == "squared":
        s_spec, v_spec = S, V
    elif kind == "L1":
        s_spec, v_spec = S_TILDE, V_TILDE
    else:
        raise ValueError(f"Unknown comparison kind: {kind}")
    if not F.grid.same_space(w.grid):
        raise WeightError("weight and field live on different spatial lattices")
    norm_s = lp_norm(apply_squarefn(s_spec, F), p, w)
    norm_v = lp_norm(apply_squarefn(v_spec, F), p, w)
    name, value = _relevant_characteristic(w, p, kind)
    ratio = None if norm_v == 0 else norm_s / norm_v
    return WeightedComparisonRecord(kind, p, w.name, norm_s, norm_v, ratio, name, value)


def weighted_averaging_identity(F: HalfSpaceField, w: Weight) -> tuple[float, float]:
    """Both sides of ||SF||^2_{L2(w)} = b_n sum |F|^2 (w(B(y,t))/|B(y,t)|) h^n dt/t."""
    grid = F.grid
    lhs = lp_norm(apply_squarefn(S, F), 2, w) ** 2
    density = F.magnitude_squared()
    rhs = 0.0
    for k, t in enumerate(grid.times):
        averages = _ball_averages(w.values, grid, t)
        rhs += float(np.sum(density[k] * averages)) * grid.dt[k] / t
    rhs *= grid.unit_ball_volume * grid.cell_volume
    return lhs, rhs


@dataclass(frozen=True)
class WeightedL2Record:
    s_squared: float  # ||SF||^2_{L2(w)}
    unit_ball_volume: float
    v_squared: float  # ||VF||^2_{L2(w)}
    a1: float
    rh_infinity: float

    @property
    def upper_ratio(self) -> float | None:
        """||SF||^2 / (b_n [w]_A1 ||VF||^2); at most 1 up to quadrature."""
        if self.v_squared == 0:
            return None
        return self.s_squared / (self.unit_ball_volume * self.a1 * self.v_squared)

    @property
    def lower_ratio(self) -> float | None:
        """||VF||^2 / ([w]_RHinf b_n^-1 ||SF||^2); at most 1 up to quadrature."""
        if self.s_squared == 0:
            return None
        return self.unit_ball_volume * self.v_squared / (self.rh_infinity * self.s_squared)


def weighted_l2_bounds(F: HalfSpaceField, w: Weight) -> WeightedL2Record:
    s_sq = lp_norm(apply_squarefn(S, F), 2, w) ** 2
    v_sq = lp_norm(apply_squarefn(V, F), 2, w) ** 2
    return WeightedL2Record(
        s_sq, F.grid.unit_ball_volume, v_sq, ap_characteristic(w, 1), rh_characteristic(w, math.inf)
    )
