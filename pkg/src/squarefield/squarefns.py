"""Conical and vertical square functions, tent norms, Lp norms and the maximal function."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from squarefield.halfspace import (
    UNIT_BALL_VOLUME,
    Grid,
    HalfSpaceField,
    SpatialFunction,
    ball_count,
    ball_sums,
    cone_sums,
)

if TYPE_CHECKING:
    from squarefield.weights import Weight

logger = logging.getLogger(__name__)


class SquareFunctionKind(Enum):
    CONICAL = "conical"
    VERTICAL = "vertical"
    CONICAL_L1 = "conical_L1"
    VERTICAL_L1 = "vertical_L1"
    CONICAL_PARABOLIC = "conical_parabolic"
    VERTICAL_PARABOLIC = "vertical_parabolic"

    @property
    def squared(self) -> bool:
        return self not in (SquareFunctionKind.CONICAL_L1, SquareFunctionKind.VERTICAL_L1)

    @property
    def conical(self) -> bool:
        return self in (
            SquareFunctionKind.CONICAL,
            SquareFunctionKind.CONICAL_L1,
            SquareFunctionKind.CONICAL_PARABOLIC,
        )


@dataclass(frozen=True)
class SquareFunctionSpec:
    kind: SquareFunctionKind
    aperture: float = 1.0
    power: float | None = None  # None: natural power of the kind for the grid dimension

    def __post_init__(self) -> None:
        if not isinstance(self.kind, SquareFunctionKind):
            object.__setattr__(self, "kind", SquareFunctionKind(self.kind))
        if not (math.isfinite(self.aperture) and self.aperture > 0):
            raise ValueError(f"aperture must be positive, got {self.aperture}")
        if self.power is not None and not math.isfinite(self.power):
            raise ValueError(f"power must be finite, got {self.power}")

    def resolved_power(self, n: int) -> float:
        if self.power is not None:
            return self.power
        return {
            SquareFunctionKind.CONICAL: n + 1,
            SquareFunctionKind.CONICAL_L1: n + 1,
            SquareFunctionKind.CONICAL_PARABOLIC: n / 2,
            SquareFunctionKind.VERTICAL: 1,
            SquareFunctionKind.VERTICAL_L1: 1,
            SquareFunctionKind.VERTICAL_PARABOLIC: 0,
        }[self.kind]


S = SquareFunctionSpec(SquareFunctionKind.CONICAL)
V = SquareFunctionSpec(SquareFunctionKind.VERTICAL)
S_TILDE = SquareFunctionSpec(SquareFunctionKind.CONICAL_L1)
V_TILDE = SquareFunctionSpec(SquareFunctionKind.VERTICAL_L1)
S_PARABOLIC = SquareFunctionSpec(SquareFunctionKind.CONICAL_PARABOLIC)
V_PARABOLIC = SquareFunctionSpec(SquareFunctionKind.VERTICAL_PARABOLIC)


def apply_squarefn(spec: SquareFunctionSpec, F: HalfSpaceField) -> SpatialFunction:
    """Evaluate the square function described by spec at every cell center.

    Vector channels enter through the Euclidean norm squared.
    """
    grid = F.grid
    q = spec.resolved_power(grid.n)
    density = F.magnitude_squared() if spec.kind.squared else F.magnitude()
    if spec.kind.conical:
        parabolic = spec.kind is SquareFunctionKind.CONICAL_PARABOLIC
        values = cone_sums(density, grid, spec.aperture, q, parabolic)
    else:
        weights = (grid.dt / grid.times**q).reshape((grid.nt,) + (1,) * grid.n)
        values = np.sum(density * weights, axis=0)
    if spec.kind.squared:
        values = np.sqrt(values)
    return SpatialFunction(grid, values)


def lp_norm(g: SpatialFunction, p: float, w: Weight | SpatialFunction | None = None) -> float:
    """(sum |g|^p w h^n)^(1/p), with w = 1 when absent."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    weights = 1.0 if w is None else w.values
    total = float(np.sum(np.abs(g.values) ** p * weights)) * g.grid.cell_volume
    return total ** (1.0 / p)


def averaging_identity_residual(F: HalfSpaceField) -> float:
    """Relative gap in ||SF||_2^2 = b_n ||VF||_2^2."""
    s_sq = lp_norm(apply_squarefn(S, F), 2) ** 2
    v_sq = lp_norm(apply_squarefn(V, F), 2) ** 2
    return abs(s_sq - F.grid.unit_ball_volume * v_sq) / max(s_sq, np.finfo(float).eps)


def tent_Tinfty_norm(
    F: HalfSpaceField,
    centers: Sequence[float | Sequence[float]],
    radii: Sequence[float] | float,
) -> float:
    """Carleson supremum over the supplied balls.

    Each ball B contributes (|B|^-1 int_{B x (0, r_B)} |F|^2 dydt/t)^(1/2).
    """
    grid = F.grid
    centers = list(centers)
    if not centers:
        raise ValueError("tent norm needs at least one ball")
    radii = [float(radii)] * len(centers) if np.isscalar(radii) else [float(r) for r in radii]
    if len(radii) != len(centers):
        raise ValueError(f"got {len(centers)} centers but {len(radii)} radii")
    density = F.magnitude_squared()
    best = 0.0
    for center, r in zip(centers, radii):
        if not 0 < r <= grid.ell / 4:
            raise ValueError(f"ball radius must lie in (0, ell/4], got {r}")
        inside = grid.torus_distance(center) < r
        cells = int(inside.sum())
        if not cells:
            # no cell center in the ball, so its tent carries no mass
            logger.debug("Ball at %s of radius %g holds no cell center", center, r)
            continue
        below = grid.times < r
        mass = density[below][:, inside].sum(axis=1) @ (grid.dt[below] / grid.times[below])
        best = max(best, float(mass) / cells)
    return math.sqrt(best)


def dyadic_radii(grid: Grid) -> list[float]:
    """h, 2h, 4h, ..., ell/2."""
    radii = []
    r = grid.h
    while r <= grid.ell / 2 * (1 + 1e-12):
        radii.append(r)
        r *= 2
    return radii


def maximal_function(g: SpatialFunction) -> SpatialFunction:
    """Centered maximal function over torus balls of dyadic radii."""
    values = np.asarray(g.values)
    if np.iscomplexobj(values) or np.any(values < 0):
        raise ValueError("maximal function takes a nonnegative real input")
    grid = g.grid
    # radius h: the ball is the center cell alone
    best = values.astype(float).copy()
    for r in dyadic_radii(grid)[1:]:
        np.maximum(best, ball_sums(values, grid, r) / ball_count(grid, r), out=best)
    return SpatialFunction(grid, best)


# ----- Comparisons -----


def explicit_constant(p: float, n: int) -> float:
    """Constant of the p < 2 bound ||VF||_p^p <= C ||SF||_p^p, taken with r = p/2."""
    if not 0 < p < 2:
        raise ValueError(f"the explicit constant needs 0 < p < 2, got {p}")
    r = p / 2
    return 2 * p / (UNIT_BALL_VOLUME[n] * (2 - p)) + 2 * p * 3**n / (p - r)


@dataclass(frozen=True)
class ComparisonRecord:
    kind: str  # squared, L1
    p: float
    norm_s: float
    norm_v: float
    ratio: float | None  # None: both norms vanish
    explicit_bound: float | None = None
    slack: float | None = None


def compare_norms(F: HalfSpaceField, p: float, kind: str = "squared") -> ComparisonRecord:
    """||SF||_p against ||VF||_p; for p < 2 also checks the explicit constant."""
    if kind == "squared":
        s_spec, v_spec = S, V
    elif kind == "L1":
        s_spec, v_spec = S_TILDE, V_TILDE
    else:
        raise ValueError(f"Unknown comparison kind: {kind}")
    norm_s = lp_norm(apply_squarefn(s_spec, F), p)
    norm_v = lp_norm(apply_squarefn(v_spec, F), p)
    ratio = None if norm_v == 0 else norm_s / norm_v
    bound = slack = None
    if kind == "squared" and p < 2:
        bound = explicit_constant(p, F.grid.n)
        if norm_s > 0:
            slack = bound - (norm_v / norm_s) ** p
        elif norm_v == 0:
            slack = bound
    return ComparisonRecord(kind, p, norm_s, norm_v, ratio, bound, slack)


def aperture_profile(
    F: HalfSpaceField, p: float, apertures: Sequence[float] = (0.5, 1.0, 2.0, 4.0)
) -> list[float | None]:
    """||S_alpha F||_p / ||S_1 F||_p for each aperture alpha."""
    base = lp_norm(apply_squarefn(S, F), p)
    out: list[float | None] = []
    for alpha in apertures:
        norm = lp_norm(apply_squarefn(SquareFunctionSpec(SquareFunctionKind.CONICAL, alpha), F), p)
        out.append(None if base == 0 else norm / base)
    return out


@dataclass(frozen=True)
class PairingRecord:
    pairing: float
    bound: float


def parabolic_pairing(F: HalfSpaceField, G: HalfSpaceField, p: float = 2.0) -> PairingRecord:
    """|int F.conj(G) dydt| next to b_n^-1 ||S_h F||_p ||S_h G||_p' (parabolic cones)."""
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if F.grid != G.grid or F.channels != G.channels:
        raise ValueError("paired fields must share grid and channel count")
    grid = F.grid
    dt = grid.dt.reshape((grid.nt,) + (1,) * grid.n)
    pairing = abs(np.sum(F.values * np.conj(G.values) * dt)) * grid.cell_volume
    dual = p / (p - 1)
    bound = (
        lp_norm(apply_squarefn(S_PARABOLIC, F), p)
        * lp_norm(apply_squarefn(S_PARABOLIC, G), dual)
        / grid.unit_ball_volume
    )
    return PairingRecord(float(pairing), bound)
