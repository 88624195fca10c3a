"""Discretized upper half-space: a periodic spatial lattice times a log-spaced time lattice.

All cone quadrature used by the square functions lives here. Cone membership is decided
by the torus distance between cell centers, with a strict inequality.
"""

from __future__ import annotations

import logging
import math
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi}

CONTAINER_MAGIC = b"SQHF"
CONTAINER_VERSION = 1
# magic, version, n, ell, nx, t_min, t_max, nt, channels, flags
_HEADER = struct.Struct("<4sIIdIddIII")
_FLAG_COMPLEX = 1
_FLAG_SPATIAL = 2


class GridError(ValueError):
    """Raised when grid parameters violate their preconditions."""


class FieldError(ValueError):
    """Raised for malformed or non-finite sample arrays."""


@dataclass(frozen=True)
class Grid:
    """Torus [-ell/2, ell/2)^n with nx points per axis, times t_1 < ... < t_nt on [t_min, t_max]."""

    n: int
    ell: float
    nx: int
    t_min: float
    t_max: float
    nt: int

    def __post_init__(self) -> None:
        if self.n not in (1, 2):
            raise GridError(f"n must be 1 or 2, got {self.n}")
        if not (math.isfinite(self.ell) and self.ell > 0):
            raise GridError(f"ell must be positive, got {self.ell}")
        if self.nx < 8 or self.nx & (self.nx - 1):
            raise GridError(f"nx must be a power of two >= 8, got {self.nx}")
        if not (math.isfinite(self.t_min) and math.isfinite(self.t_max)):
            raise GridError("time bounds must be finite")
        if not 0 < self.t_min < self.t_max:
            raise GridError(
                f"time bounds must satisfy 0 < t_min < t_max, got {self.t_min}, {self.t_max}"
            )
        if self.nt < 2:
            raise GridError(f"nt must be at least 2, got {self.nt}")

    @property
    def h(self) -> float:
        return self.ell / self.nx

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.n

    @property
    def size(self) -> int:
        return self.nx**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def unit_ball_volume(self) -> float:
        return UNIT_BALL_VOLUME[self.n]

    @property
    def log_step(self) -> float:
        """Spacing of the time nodes in log t; equals dt_k / t_k for every node."""
        return math.log(self.t_max / self.t_min) / self.nt

    @cached_property
    def times(self) -> np.ndarray:
        k = np.arange(1, self.nt + 1, dtype=float)
        out = self.t_min * (self.t_max / self.t_min) ** ((k - 0.5) / self.nt)
        out.setflags(write=False)
        return out

    @cached_property
    def dt(self) -> np.ndarray:
        out = self.times * self.log_step
        out.setflags(write=False)
        return out

    @cached_property
    def axis(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        out = -self.ell / 2 + self.h * np.arange(self.nx)
        out.setflags(write=False)
        return out

    def coordinates(self) -> np.ndarray:
        """Array of shape (n, *shape) holding the coordinates of every cell center."""
        return np.stack(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    def torus_distance(self, x: float | Sequence[float]) -> np.ndarray:
        """Torus distance from the point x to every cell center."""
        point = np.atleast_1d(np.asarray(x, dtype=float))
        if point.shape != (self.n,):
            raise GridError(f"point must have {self.n} coordinates, got {point.shape}")
        total = np.zeros(self.shape)
        for axis, coords in enumerate(self.coordinates()):
            d = np.abs(np.mod(coords - point[axis] + self.ell / 2, self.ell) - self.ell / 2)
            total += d * d
        return np.sqrt(total)

    def index_of(self, x: float | Sequence[float]) -> tuple[int, ...]:
        """Index of the cell center nearest to x."""
        point = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint((point + self.ell / 2) / self.h).astype(int) % self.nx
        return tuple(int(i) for i in idx)

    def refined(self) -> Grid:
        """Same domain with nx and nt doubled."""
        return Grid(self.n, self.ell, 2 * self.nx, self.t_min, self.t_max, 2 * self.nt)

    def same_space(self, other: Grid) -> bool:
        return (self.n, self.ell, self.nx) == (other.n, other.ell, other.nx)


def make_grid(n: int, ell: float, nx: int, t_min: float, t_max: float, nt: int) -> Grid:
    """Build a Grid, rejecting non-positive or mis-ordered bounds."""
    grid = Grid(int(n), float(ell), int(nx), float(t_min), float(t_max), int(nt))
    logger.debug(
        "Grid n=%d ell=%g nx=%d h=%g t=[%g, %g] nt=%d",
        grid.n, grid.ell, grid.nx, grid.h, grid.t_min, grid.t_max, grid.nt,
    )
    return grid


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class HalfSpaceField:
    """Samples F(y, t_k) stored channel-first as (channels, nt, *spatial)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        expected = (self.grid.nt, *self.grid.shape)
        if values.shape == expected:
            values = values[np.newaxis]
        if values.ndim != len(expected) + 1 or values.shape[1:] != expected:
            raise FieldError(f"field shape {values.shape} does not match grid {expected}")
        if values.shape[0] < 1:
            raise FieldError("field needs at least one channel")
        if not np.all(np.isfinite(values)):
            raise FieldError("field samples must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def magnitude_squared(self) -> np.ndarray:
        """Sum over channels of |F_c|^2, shape (nt, *spatial)."""
        values = self.values
        if np.iscomplexobj(values):
            return np.sum(values.real**2 + values.imag**2, axis=0)
        return np.sum(values * values, axis=0)

    def magnitude(self) -> np.ndarray:
        if self.channels == 1:
            return np.abs(self.values[0])
        return np.sqrt(self.magnitude_squared())

    def scaled(self, c: complex) -> HalfSpaceField:
        return HalfSpaceField(self.grid, c * self.values)


@dataclass(frozen=True, eq=False)
class SpatialFunction:
    """Samples g(x) on the spatial lattice of a grid; the time axis is unused."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.shape != self.grid.shape:
            raise FieldError(f"function shape {values.shape} does not match {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("function samples must be finite")
        object.__setattr__(self, "values", _frozen(values))

    def mean(self) -> complex | float:
        return self.values.mean()

    def mean_free(self) -> SpatialFunction:
        return SpatialFunction(self.grid, self.values - self.values.mean())

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))


def sample_field(closure: Callable[[np.ndarray, np.ndarray], object], grid: Grid) -> HalfSpaceField:
    """Sample closure(y, t) at cell centers.

    ``y`` has shape (n, 1, *spatial) so ``y[0]`` is the first coordinate and
    ``(y**2).sum(axis=0)`` is |y|^2; ``t`` has shape (nt, 1, ...) and broadcasts against it.
    """
    y = grid.coordinates()[:, np.newaxis]
    t = grid.times.reshape((grid.nt,) + (1,) * grid.n)
    raw = np.asarray(closure(y, t))
    try:
        values = np.broadcast_to(raw, (grid.nt, *grid.shape))
    except ValueError as e:
        raise FieldError(f"closure output of shape {raw.shape} does not broadcast") from e
    return HalfSpaceField(grid, values)


def sample_function(closure: Callable[[np.ndarray], object], grid: Grid) -> SpatialFunction:
    """Sample closure(x) at cell centers; ``x`` has shape (n, *spatial)."""
    raw = np.asarray(closure(grid.coordinates()))
    try:
        values = np.broadcast_to(raw, grid.shape)
    except ValueError as e:
        raise FieldError(f"closure output of shape {raw.shape} does not broadcast") from e
    return SpatialFunction(grid, values)


# ----- Lattice balls -----


def _half_width(reach_sq: float) -> int:
    """Largest integer o >= 0 with o*o < reach_sq, or -1 when there is none."""
    if reach_sq <= 0:
        return -1
    o = max(math.ceil(math.sqrt(reach_sq)) - 1, 0)
    while (o + 1) * (o + 1) < reach_sq:
        o += 1
    while o >= 0 and o * o >= reach_sq:
        o -= 1
    return o


def _row_offsets(nx: int, reach: float) -> list[tuple[int, int]]:
    """(dy, half width along the last axis) for every torus row offset inside the ball."""
    reach_sq = reach * reach
    rows = []
    for dy in range(-(nx // 2), nx // 2):
        half = _half_width(reach_sq - dy * dy)
        if half >= 0:
            rows.append((dy, half))
    return rows


def _window_sums(values: np.ndarray, half: int, axis: int) -> np.ndarray:
    """Periodic sums of values[i - half .. i + half] along axis."""
    nx = values.shape[axis]
    if half < 0:
        return np.zeros_like(values)
    if 2 * half + 1 >= nx:
        total = np.cumsum(values, axis=axis).take([nx - 1], axis=axis)
        return np.broadcast_to(total, values.shape).copy()
    padded = np.concatenate(
        [values.take(range(nx - half, nx), axis=axis), values, values.take(range(half), axis=axis)],
        axis=axis,
    )
    zero = np.zeros_like(values.take([0], axis=axis))
    csum = np.concatenate([zero, np.cumsum(padded, axis=axis)], axis=axis)
    width = 2 * half + 1
    return csum.take(range(width, width + nx), axis=axis) - csum.take(range(nx), axis=axis)


def ball_sums(values: np.ndarray, grid: Grid, radius: float) -> np.ndarray:
    """For every cell x, the sum of values over cells y with torus |x - y| < radius."""
    reach = radius / grid.h
    if grid.n == 1:
        return _window_sums(values, _half_width(reach * reach), axis=0)
    out = np.zeros(values.shape, dtype=np.result_type(values, float))
    for dy, half in _row_offsets(grid.nx, reach):
        out += np.roll(_window_sums(values, half, axis=1), -dy, axis=0)
    return out


def ball_count(grid: Grid, radius: float) -> int:
    """Number of lattice cells in a torus ball of the given radius."""
    reach = radius / grid.h
    if grid.n == 1:
        return min(2 * _half_width(reach * reach) + 1, grid.nx)
    return sum(min(2 * half + 1, grid.nx) for _, half in _row_offsets(grid.nx, reach))


def ball_measure(grid: Grid, radius: float) -> float:
    return ball_count(grid, radius) * grid.cell_volume


# ----- Cone quadrature -----


def _cone_radius(t: float, alpha: float, parabolic: bool) -> float:
    return alpha * (math.sqrt(t) if parabolic else t)


def cone_sums(
    density: np.ndarray, grid: Grid, alpha: float, q: float, parabolic: bool = False
) -> np.ndarray:
    """Cone integrals of a real (nt, *spatial) density at every cell, as an array."""
    if alpha <= 0:
        raise ValueError(f"aperture must be positive, got {alpha}")
    total = np.zeros(grid.shape)
    for k, t in enumerate(grid.times):
        weight = grid.cell_volume * grid.dt[k] / t**q
        total += weight * ball_sums(density[k], grid, _cone_radius(t, alpha, parabolic))
    return total


def _scalar_density(F: HalfSpaceField) -> np.ndarray:
    if F.channels != 1:
        raise FieldError("cone integrals take a scalar channel (pass |F|^2 or |F|)")
    density = F.values[0]
    if np.iscomplexobj(density):
        raise FieldError("cone integrals take a real density")
    return density


def cone_integral(
    F: HalfSpaceField,
    x: float | Sequence[float],
    alpha: float = 1.0,
    q: float | None = None,
    *,
    parabolic: bool = False,
) -> float:
    """Sum of F * h^n * dt_k / t_k^q over cells with dist(x, y) < alpha * t_k.

    ``q`` defaults to n + 1; ``parabolic`` switches the cone to |x - y| < alpha * sqrt(t).
    """
    if alpha <= 0:
        raise ValueError(f"aperture must be positive, got {alpha}")
    grid = F.grid
    q = grid.n + 1 if q is None else q
    density = _scalar_density(F)
    dist = grid.torus_distance(x)
    total = 0.0
    for k, t in enumerate(grid.times):
        inside = dist < _cone_radius(t, alpha, parabolic)
        total += float(density[k][inside].sum()) * grid.cell_volume * grid.dt[k] / t**q
    return total


def cone_integrals(
    F: HalfSpaceField, alpha: float = 1.0, q: float | None = None, *, parabolic: bool = False
) -> SpatialFunction:
    """cone_integral evaluated at every cell center at once."""
    grid = F.grid
    q = grid.n + 1 if q is None else q
    return SpatialFunction(grid, cone_sums(_scalar_density(F), grid, alpha, q, parabolic))


# ----- Binary container -----


def _pack(path: Path, grid: Grid, payload: np.ndarray, channels: int, spatial: bool) -> None:
    flags = _FLAG_SPATIAL if spatial else 0
    if np.iscomplexobj(payload):
        flags |= _FLAG_COMPLEX
        payload = np.stack([payload.real, payload.imag], axis=-1)
    header = _HEADER.pack(
        CONTAINER_MAGIC, CONTAINER_VERSION, grid.n, grid.ell, grid.nx,
        grid.t_min, grid.t_max, grid.nt, channels, flags,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _unpack(path: Path) -> tuple[Grid, np.ndarray, int]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FieldError(f"{path}: truncated header")
    magic, version, n, ell, nx, t_min, t_max, nt, channels, flags = _HEADER.unpack_from(data)
    if magic != CONTAINER_MAGIC:
        raise FieldError(f"{path}: not a squarefield container")
    if version != CONTAINER_VERSION:
        raise FieldError(f"{path}: unsupported container version {version}")
    grid = Grid(n, ell, nx, t_min, t_max, nt)
    shape = (channels, *grid.shape) if flags & _FLAG_SPATIAL else (nt, channels, *grid.shape)
    if flags & _FLAG_COMPLEX:
        shape = (*shape, 2)
    payload = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if payload.size != math.prod(shape):
        raise FieldError(f"{path}: payload size {payload.size} does not match header")
    payload = payload.reshape(shape).astype(float)
    if flags & _FLAG_COMPLEX:
        payload = payload[..., 0] + 1j * payload[..., 1]
    return grid, payload, flags


def write_field(path: Path, field: HalfSpaceField) -> None:
    """Write a field; the payload is time-major: (nt, channels, *spatial)."""
    _pack(path, field.grid, np.moveaxis(field.values, 0, 1), field.channels, spatial=False)


def read_field(path: Path) -> HalfSpaceField:
    grid, payload, flags = _unpack(path)
    if flags & _FLAG_SPATIAL:
        raise FieldError(f"{path}: holds spatial data, not a half-space field")
    return HalfSpaceField(grid, np.moveaxis(payload, 1, 0))


def write_spatial(path: Path, grid: Grid, values: np.ndarray) -> None:
    """Write (channels, *spatial) samples, e.g. a function or a flattened coefficient field."""
    values = np.asarray(values)
    if values.shape == grid.shape:
        values = values[np.newaxis]
    _pack(path, grid, values, values.shape[0], spatial=True)


def read_spatial(path: Path) -> tuple[Grid, np.ndarray]:
    grid, payload, flags = _unpack(path)
    if not flags & _FLAG_SPATIAL:
        raise FieldError(f"{path}: holds a half-space field, not spatial data")
    return grid, payload
