"""Seeded random fields and functions shared by the experiments and the tests.

Item i of a corpus is drawn from ``default_rng([seed, i])``, so it does not depend on the
corpus size, the iteration order or the worker layout, and refining the grid re-samples
the same continuum object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from squarefield.halfspace import (
    Grid,
    HalfSpaceField,
    SpatialFunction,
    sample_field,
    sample_function,
)


@dataclass(frozen=True)
class FieldBump:
    amplitude: float
    center: tuple[float, ...]
    width: float
    log_time: float
    log_width: float


@dataclass(frozen=True)
class SpatialBump:
    amplitude: float
    center: tuple[float, ...]
    width: float


def draw_field_bumps(
    rng: np.random.Generator, n: int, ell: float, max_bumps: int = 8
) -> tuple[FieldBump, ...]:
    """1..max_bumps Gaussian bumps in (y, log t), concentrated well inside the torus."""
    count = int(rng.integers(1, max_bumps + 1))
    bumps = []
    for _ in range(count):
        bumps.append(
            FieldBump(
                amplitude=float(rng.normal()),
                center=tuple(float(c) for c in rng.uniform(-ell / 8, ell / 8, size=n)),
                width=float(rng.uniform(ell / 64, ell / 24)),
                log_time=float(rng.uniform(math.log(ell / 16), math.log(ell / 8))),
                log_width=float(rng.uniform(0.25, 0.4)),
            )
        )
    return tuple(bumps)


def draw_spatial_bumps(
    rng: np.random.Generator, n: int, ell: float, max_bumps: int = 4
) -> tuple[SpatialBump, ...]:
    count = int(rng.integers(1, max_bumps + 1))
    return tuple(
        SpatialBump(
            amplitude=float(rng.normal()),
            center=tuple(float(c) for c in rng.uniform(-ell / 8, ell / 8, size=n)),
            width=float(rng.uniform(ell / 32, ell / 12)),
        )
        for _ in range(count)
    )


def _gaussian(y: np.ndarray, center: tuple[float, ...], width: float) -> np.ndarray:
    offset = y - np.asarray(center).reshape((-1,) + (1,) * (y.ndim - 1))
    return np.exp(-(offset**2).sum(axis=0) / (2 * width * width))


def field_from_bumps(bumps: tuple[FieldBump, ...], grid: Grid) -> HalfSpaceField:
    def closure(y: np.ndarray, t: np.ndarray) -> np.ndarray:
        total = np.zeros((grid.nt, *grid.shape))
        for b in bumps:
            profile = np.exp(-((np.log(t) - b.log_time) ** 2) / (2 * b.log_width**2))
            total = total + b.amplitude * _gaussian(y, b.center, b.width) * profile
        return total

    return sample_field(closure, grid)


def function_from_bumps(bumps: tuple[SpatialBump, ...], grid: Grid) -> SpatialFunction:
    def closure(x: np.ndarray) -> np.ndarray:
        total = np.zeros(grid.shape)
        for b in bumps:
            total = total + b.amplitude * _gaussian(x, b.center, b.width)
        return total

    return sample_function(closure, grid)


def corpus_field(grid: Grid, seed: int, index: int) -> HalfSpaceField:
    rng = np.random.default_rng([seed, index])
    return field_from_bumps(draw_field_bumps(rng, grid.n, grid.ell), grid)


def corpus_function(
    grid: Grid, seed: int, index: int, mean_free: bool = False
) -> SpatialFunction:
    rng = np.random.default_rng([seed, index])
    f = function_from_bumps(draw_spatial_bumps(rng, grid.n, grid.ell), grid)
    return f.mean_free() if mean_free else f


def field_corpus(grid: Grid, seed: int, count: int) -> list[HalfSpaceField]:
    return [corpus_field(grid, seed, i) for i in range(count)]


def function_corpus(
    grid: Grid, seed: int, count: int, mean_free: bool = False
) -> list[SpatialFunction]:
    """Sums of spatial Gaussian bumps; ``mean_free`` removes the torus mean."""
    return [corpus_function(grid, seed, i, mean_free) for i in range(count)]


def gaussian_bump(
    grid: Grid, width: float, center: float | tuple[float, ...] = 0.0
) -> SpatialFunction:
    center = tuple(np.broadcast_to(np.asarray(center, dtype=float), (grid.n,)).tolist())
    return sample_function(lambda x: _gaussian(x, center, width), grid)
