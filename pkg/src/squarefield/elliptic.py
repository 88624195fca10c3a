"""Divergence-form operators L = -div(A grad) on the torus, their heat and Poisson
semigroups, and the gradient fields the square functions are evaluated on.

The assembled matrix uses face-averaged forward differences for the diagonal entries of A
and centered differences for the mixed entries, so it annihilates constants, preserves
the mean, and reduces to the standard discrete Laplacian for A = Id.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import roots_genlaguerre

from squarefield.halfspace import (
    Grid,
    HalfSpaceField,
    SpatialFunction,
    cone_integral,
    read_spatial,
)

logger = logging.getLogger(__name__)

SPECTRAL_MAX_SIZE = 4096
POISSON_NODES = 32
MIN_POISSON_NODES = 16
# decades the mean-free part must fall before a Crank-Nicolson march stops
SETTLE_DECADES = 18
PRESETS = ("identity", "smooth-scalar", "checkerboard", "complex-perturbed")

_DIRECTION_SEED = 1729
_DIRECTION_RANDOM = 8
_LOG_NODE_RANGE = (-20.0, 3.0)


class EllipticityError(ValueError):
    """Raised when a coefficient field or its bounds fail the ellipticity checks."""


class SemigroupError(RuntimeError):
    """Raised when a linear solve inside a semigroup evaluation fails."""


# ----- Difference operators -----


def _shift(nx: int) -> sparse.csr_matrix:
    """(S u)_i = u_{i+1} on the periodic lattice."""
    return sparse.diags(
        [np.ones(nx - 1), np.ones(1)], [1, -(nx - 1)], shape=(nx, nx), format="csr"
    )


def _along_axis(op1d: sparse.spmatrix, axis: int, grid: Grid) -> sparse.csr_matrix:
    if grid.n == 1:
        return sparse.csr_matrix(op1d)
    eye = sparse.identity(grid.nx, format="csr")
    pieces = [eye] * grid.n
    pieces[axis] = op1d
    out = pieces[0]
    for piece in pieces[1:]:
        out = sparse.kron(out, piece)
    return sparse.csr_matrix(out)


@lru_cache(maxsize=8)
def forward_differences(grid: Grid) -> tuple[sparse.csr_matrix, ...]:
    s = _shift(grid.nx)
    eye = sparse.identity(grid.nx, format="csr")
    return tuple(_along_axis((s - eye) / grid.h, a, grid) for a in range(grid.n))


@lru_cache(maxsize=8)
def centered_differences(grid: Grid) -> tuple[sparse.csr_matrix, ...]:
    s = _shift(grid.nx)
    return tuple(_along_axis((s - s.T) / (2 * grid.h), a, grid) for a in range(grid.n))


def centered_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Centered differences over the trailing n spatial axes; returns (n, *values.shape)."""
    lead = values.ndim - grid.n
    return np.stack(
        [
            (np.roll(values, -1, axis=lead + a) - np.roll(values, 1, axis=lead + a)) / (2 * grid.h)
            for a in range(grid.n)
        ]
    )


def face_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Forward differences over the trailing n spatial axes; returns (n, *values.shape).

    Summing |face_gradient(u)|^2 reproduces u^T L u for A = Id exactly.
    """
    lead = values.ndim - grid.n
    return np.stack(
        [(np.roll(values, -1, axis=lead + a) - values) / grid.h for a in range(grid.n)]
    )


# ----- Operator -----


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Assembled -div(A grad) on the spatial lattice of ``grid``.

    ``lower`` and ``upper`` are the declared ellipticity constants lambda and Lambda.
    """

    grid: Grid
    coefficients: np.ndarray  # (n, n, *spatial)
    lower: float
    upper: float
    matrix: sparse.csr_matrix
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def size(self) -> int:
        return self.grid.size

    @cached_property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix)

    @cached_property
    def is_hermitian(self) -> bool:
        gap = abs(self.matrix - self.matrix.conj().T)
        scale = abs(self.matrix).max()
        return gap.max() <= 1e-12 * scale if gap.nnz else True

    @property
    def spectral(self) -> bool:
        """Whether semigroups are evaluated from a full eigendecomposition."""
        return self.is_hermitian and self.size <= SPECTRAL_MAX_SIZE

    @cached_property
    def coefficient_bound(self) -> float:
        """max over cells of the operator norm of A(x)."""
        return float(_cell_norms(self.coefficients).max())

    def apply(self, values: np.ndarray) -> np.ndarray:
        """L applied to samples of shape (*spatial)."""
        return (self.matrix @ np.asarray(values).reshape(-1)).reshape(self.grid.shape)

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """(eigenvalues clipped at 0, orthonormal eigenvectors); computed once per operator."""
        with self._lock:
            if "eigh" not in self._cache:
                logger.debug("Eigendecomposition of a %d x %d operator", self.size, self.size)
                evals, evecs = scipy.linalg.eigh(self.matrix.toarray())
                self._cache["eigh"] = (np.clip(evals, 0.0, None), evecs)
            return self._cache["eigh"]


def _cell_matrices(coefficients: np.ndarray) -> np.ndarray:
    n = coefficients.shape[0]
    return np.moveaxis(coefficients.reshape(n, n, -1), -1, 0)


def _cell_norms(coefficients: np.ndarray) -> np.ndarray:
    return np.linalg.norm(_cell_matrices(coefficients), ord=2, axis=(1, 2))


def _direction_vectors(n: int) -> np.ndarray:
    """Unit vectors e_i, (e_i +- e_j)/sqrt2, (e_i +- i e_j)/sqrt2 and a fixed random set."""
    eye = np.eye(n, dtype=complex)
    directions = list(eye)
    for i in range(n):
        for j in range(i + 1, n):
            for c in (1, -1, 1j, -1j):
                directions.append((eye[i] + c * eye[j]) / math.sqrt(2))
    rng = np.random.default_rng(_DIRECTION_SEED)
    shape = (_DIRECTION_RANDOM, n)
    extra = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    directions.extend(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    return np.array(directions)


def _coefficient_field(closure: Callable[[np.ndarray], object], grid: Grid) -> np.ndarray:
    """Sample A at cell centers; a scalar-valued closure means a * Id."""
    n = grid.n
    raw = np.asarray(closure(grid.coordinates()))
    if raw.ndim == n + 2 and raw.shape[:2] == (n, n):
        values = np.broadcast_to(raw, (n, n, *grid.shape))
    else:
        try:
            scalar = np.broadcast_to(raw, grid.shape)
        except ValueError as e:
            raise EllipticityError(f"coefficient closure returned shape {raw.shape}") from e
        values = np.eye(n).reshape((n, n) + (1,) * n) * scalar
    values = np.array(values)
    if not np.all(np.isfinite(values)):
        raise EllipticityError("coefficient field must be finite")
    if np.iscomplexobj(values) and not np.any(values.imag):
        values = values.real
    return values


def _check_bounds(coefficients: np.ndarray, lower: float, upper: float) -> None:
    cells = _cell_matrices(coefficients)
    directions = _direction_vectors(coefficients.shape[0])
    forms = np.einsum("cab,pb,pa->cp", cells, directions, directions.conj()).real
    worst = float(forms.min())
    if worst < lower * (1 - 1e-12):
        cell = int(np.unravel_index(np.argmin(forms), forms.shape)[0])
        raise EllipticityError(
            f"Re A(x)xi.conj(xi) = {worst:.6g} < lambda = {lower} at cell {cell}"
        )
    norm = float(np.linalg.norm(cells, ord=2, axis=(1, 2)).max())
    if norm > upper * (1 + 1e-12):
        raise EllipticityError(f"|A(x)| reaches {norm:.6g} > Lambda = {upper}")


def _check_matrix(matrix: sparse.csr_matrix, grid: Grid) -> None:
    scale = max(abs(matrix).max(), 1.0)
    row_sums = np.abs(matrix @ np.ones(grid.size)).max()
    if row_sums > 1e-10 * scale:
        raise EllipticityError(f"discrete operator does not annihilate constants ({row_sums:.3g})")
    rng = np.random.default_rng(_DIRECTION_SEED)
    vectors = rng.standard_normal((grid.size, 4)) + 1j * rng.standard_normal((grid.size, 4))
    forms = np.einsum("nk,nk->k", vectors.conj(), matrix @ vectors).real
    if forms.min() < -1e-10 * scale * np.sum(np.abs(vectors) ** 2, axis=0).max():
        raise EllipticityError(
            f"discrete operator is not accretive (Re <Lv, v> = {forms.min():.3g})"
        )


def assemble(
    closure: Callable[[np.ndarray], object], lower: float, upper: float, grid: Grid
) -> EllipticOperator:
    """Assemble L = -div(A grad) from a coefficient closure A(x), x of shape (n, *spatial).

    The closure returns an (n, n, *spatial) matrix field or a scalar field meaning a * Id.
    """
    if not (math.isfinite(lower) and lower > 0):
        raise EllipticityError(f"lambda must be positive, got {lower}")
    if not (math.isfinite(upper) and upper >= lower):
        raise EllipticityError(f"Lambda must be at least lambda = {lower}, got {upper}")
    coefficients = _coefficient_field(closure, grid)
    _check_bounds(coefficients, lower, upper)

    dtype = complex if np.iscomplexobj(coefficients) else float
    matrix = sparse.csr_matrix((grid.size, grid.size), dtype=dtype)
    forward = forward_differences(grid)
    centered = centered_differences(grid)
    for a in range(grid.n):
        diag = coefficients[a, a]
        face = 0.5 * (diag + np.roll(diag, -1, axis=a))
        matrix = matrix + forward[a].T @ sparse.diags(face.ravel()) @ forward[a]
        for b in range(grid.n):
            if b != a and np.any(coefficients[a, b]):
                mixed = sparse.diags(coefficients[a, b].ravel())
                matrix = matrix + centered[a].T @ mixed @ centered[b]
    matrix = sparse.csr_matrix(matrix)
    matrix.eliminate_zeros()
    _check_matrix(matrix, grid)
    op = EllipticOperator(grid, coefficients, float(lower), float(upper), matrix)
    logger.debug(
        "Assembled operator on %s: nnz=%d hermitian=%s spectral=%s",
        grid.shape, matrix.nnz, op.is_hermitian, op.spectral,
    )
    return op


def _load_coefficients(path: Path, grid: Grid) -> tuple[Callable, float, float]:
    file_grid, payload = read_spatial(path)
    if not file_grid.same_space(grid):
        raise EllipticityError(
            f"{path}: coefficient grid (n={file_grid.n}, ell={file_grid.ell}, "
            f"nx={file_grid.nx}) does not match the experiment grid"
        )
    n = grid.n
    if payload.shape[0] == 1:
        coefficients = np.eye(n).reshape((n, n) + (1,) * n) * payload[0]
    elif payload.shape[0] == n * n:
        coefficients = payload.reshape((n, n, *grid.shape))
    else:
        raise EllipticityError(f"{path}: expected 1 or {n * n} channels, got {payload.shape[0]}")
    cells = _cell_matrices(coefficients)
    hermitian_part = 0.5 * (cells + np.conj(np.swapaxes(cells, 1, 2)))
    lower = float(np.linalg.eigvalsh(hermitian_part).min())
    upper = float(_cell_norms(coefficients).max())
    return (lambda x: coefficients), lower, upper


def coefficient_preset(
    name: str, grid: Grid, epsilon: float = 0.3
) -> tuple[Callable[[np.ndarray], object], float, float]:
    """(closure, lambda, Lambda) for a named coefficient field.

    Known names: identity, smooth-scalar, checkerboard, complex-perturbed, file:<path>.
    """
    ell = grid.ell
    if name == "identity":
        return (lambda x: 1.0), 1.0, 1.0
    if name == "smooth-scalar":
        return (lambda x: 2.0 + np.sin(2 * np.pi * x[0] / ell)), 1.0, 3.0
    if name == "checkerboard":
        side = ell / 8

        def checkerboard(x: np.ndarray) -> np.ndarray:
            blocks = np.floor((x + ell / 2) / side).astype(int).sum(axis=0)
            return np.where(blocks % 2 == 0, 1.0, 3.0)

        return checkerboard, 1.0, 3.0
    if name == "complex-perturbed":
        if not 0 <= epsilon < 1:
            raise EllipticityError(f"epsilon must lie in [0, 1), got {epsilon}")
        upper = math.ceil(10 * math.sqrt(1 + epsilon**2)) / 10

        def perturbed(x: np.ndarray) -> np.ndarray:
            phase = 2 * np.pi * x[0] / ell
            if grid.n == 1:
                return 1.0 + 1j * epsilon * np.cos(phase)[np.newaxis, np.newaxis]
            c, s = np.cos(phase), np.sin(phase)
            b = np.array([[c, s], [s, -c]])
            return np.eye(2).reshape(2, 2, 1, 1) + 1j * epsilon * b

        return perturbed, 1.0, upper
    if name.startswith("file:"):
        return _load_coefficients(Path(name[len("file:"):]), grid)
    raise EllipticityError(f"Unknown operator preset: {name}")


def operator_preset(name: str, grid: Grid, epsilon: float = 0.3) -> EllipticOperator:
    closure, lower, upper = coefficient_preset(name, grid, epsilon)
    return assemble(closure, lower, upper, grid)


# ----- Semigroups -----


def _check_times(times: Sequence[float] | np.ndarray) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.ndim != 1:
        raise ValueError("times must be a flat sequence")
    if times.size and (not np.all(np.isfinite(times)) or times.min() <= 0):
        raise ValueError(f"semigroup times must be positive and finite, got min {times.min()}")
    return times


def _columns(op: EllipticOperator, f: SpatialFunction | np.ndarray) -> np.ndarray:
    if isinstance(f, SpatialFunction):
        if not f.grid.same_space(op.grid):
            raise ValueError("function and operator live on different spatial lattices")
        values = f.values
    else:
        values = np.asarray(f)
        if values.shape != op.grid.shape:
            raise ValueError(f"samples of shape {values.shape} do not match {op.grid.shape}")
    return values.reshape(-1, 1)


def _result_dtype(op: EllipticOperator, columns: np.ndarray) -> np.dtype:
    return np.result_type(columns, op.matrix.dtype, float)


def _march(
    op: EllipticOperator, columns: np.ndarray, times: np.ndarray
) -> Iterator[tuple[int, np.ndarray]]:
    """Crank-Nicolson through the sorted times, yielding (index into times, state).

    Substeps obey delta <= min(t/32, h^2/(2 Lambda)); each interval between consecutive
    times is factorized once. Once the mean-free part has decayed below round-off, or
    the march has passed ``settle_time(op)``, the state is constant and no further steps
    are taken.
    """
    dtype = _result_dtype(op, columns)
    matrix = op.matrix.astype(dtype).tocsc()
    eye = sparse.identity(op.size, dtype=dtype, format="csc")
    cap = op.grid.h**2 / (2 * op.upper)
    horizon = settle_time(op)
    scale = max(float(np.abs(columns).max()), np.finfo(float).tiny)
    current = columns.astype(dtype, copy=True)
    t_now = 0.0
    settled = False
    total_steps = 0
    for index in np.argsort(times, kind="stable"):
        t = float(times[index])
        span = t - t_now
        if span > 0 and not settled:
            reach = min(t, max(horizon, t_now))
            span = reach - t_now
            steps = max(1, math.ceil(span / min(reach / 32, cap) * (1 - 1e-12)))
            delta = span / steps
            try:
                lu = splu(sparse.csc_matrix(eye + 0.5 * delta * matrix))
            except RuntimeError as e:
                raise SemigroupError(
                    f"Crank-Nicolson factorization failed at substep {delta:.3g}"
                ) from e
            explicit = sparse.csr_matrix(eye - 0.5 * delta * matrix)
            for _ in range(steps):
                current = lu.solve(explicit @ current)
            total_steps += steps
            settled = reach >= horizon or (
                np.abs(current - current.mean(axis=0)).max() <= 1e-15 * scale
            )
        if span > 0:
            t_now = t
        yield int(index), current
    logger.debug("Crank-Nicolson: %d times, %d substeps", len(times), total_steps)


def _heat_columns(op: EllipticOperator, columns: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.empty((len(times), *columns.shape), dtype=_result_dtype(op, columns))
    if op.spectral:
        evals, evecs = op.eigensystem()
        coeffs = evecs.conj().T @ columns
        for i, t in enumerate(times):
            out[i] = evecs @ (np.exp(-t * evals)[:, np.newaxis] * coeffs)
    else:
        for i, state in _march(op, columns, times):
            out[i] = state
    return out


def settle_time(op: EllipticOperator) -> float:
    """Time after which e^{-tL} f equals the mean of f to well below round-off.

    The mean-free part decays at least like exp(-lambda mu_1 t), mu_1 being the first
    nonzero eigenvalue of the periodic second difference.
    """
    mu_1 = (2 - 2 * math.cos(2 * math.pi / op.grid.nx)) / op.grid.h**2
    return SETTLE_DECADES * math.log(10) / (op.lower * mu_1)


@lru_cache(maxsize=8)
def subordination_rule(
    nodes: int = POISSON_NODES, rule: str = "log-trapezoid"
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes s_i and normalized weights for the weight s^(-1/2) e^(-s) on (0, inf).

    ``log-trapezoid`` spaces the nodes evenly in log s over [e^-20, e^3]; it resolves the
    factor e^{-t^2 mu/(4s)} at every scale of t^2 mu, so e^{-t sqrt(mu)} comes out within
    about 1e-4 at 32 nodes. ``laguerre`` is the generalized Gauss-Laguerre rule, which is
    exact for polynomials in s but misses the sqrt(t^2 mu) behaviour near t^2 mu = 0 by
    a few percent. Weights sum to one, so either rule maps constants to constants.
    """
    if nodes < MIN_POISSON_NODES:
        raise ValueError(f"subordination needs at least {MIN_POISSON_NODES} nodes, got {nodes}")
    if rule == "log-trapezoid":
        u = np.linspace(*_LOG_NODE_RANGE, nodes)
        s = np.exp(u)
        w = np.exp(0.5 * u - s)
    elif rule == "laguerre":
        s, w = roots_genlaguerre(nodes, -0.5)
    else:
        raise ValueError(f"Unknown subordination rule: {rule}")
    w = w / w.sum()
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def _poisson_columns(
    op: EllipticOperator, columns: np.ndarray, times: np.ndarray, nodes: int
) -> np.ndarray:
    s, w = subordination_rule(nodes)
    out = np.zeros((len(times), *columns.shape), dtype=_result_dtype(op, columns))
    if op.spectral:
        evals, evecs = op.eigensystem()
        coeffs = evecs.conj().T @ columns
        for i, t in enumerate(times):
            symbol = np.exp(-np.outer(evals, t * t / (4 * s))) @ w
            out[i] = evecs @ (symbol[:, np.newaxis] * coeffs)
        return out
    taus = np.outer(times * times, 1 / (4 * s)).ravel()
    for j, state in _march(op, columns, taus):
        i, k = divmod(j, len(s))
        out[i] += w[k] * state
    return out


def _finish(
    op: EllipticOperator, f: SpatialFunction | np.ndarray, values: np.ndarray
) -> np.ndarray:
    source = f.values if isinstance(f, SpatialFunction) else np.asarray(f)
    if op.is_real and not np.iscomplexobj(source) and np.iscomplexobj(values):
        values = values.real
    return values


def heat_many(
    op: EllipticOperator, f: SpatialFunction | np.ndarray, times: Sequence[float] | np.ndarray
) -> np.ndarray:
    """e^{-tL} f for every t in times; returns (len(times), *spatial)."""
    times = _check_times(times)
    columns = _columns(op, f)
    values = _heat_columns(op, columns, times)[..., 0].reshape((len(times), *op.grid.shape))
    return _finish(op, f, values)


def heat(op: EllipticOperator, f: SpatialFunction, t: float) -> SpatialFunction:
    return SpatialFunction(op.grid, heat_many(op, f, [t])[0])


def poisson_many(
    op: EllipticOperator,
    f: SpatialFunction | np.ndarray,
    times: Sequence[float] | np.ndarray,
    nodes: int = POISSON_NODES,
) -> np.ndarray:
    """e^{-tL^(1/2)} f for every t in times through the subordination integral."""
    times = _check_times(times)
    columns = _columns(op, f)
    values = _poisson_columns(op, columns, times, nodes)[..., 0]
    return _finish(op, f, values.reshape((len(times), *op.grid.shape)))


def poisson(
    op: EllipticOperator, f: SpatialFunction, t: float, nodes: int = POISSON_NODES
) -> SpatialFunction:
    return SpatialFunction(op.grid, poisson_many(op, f, [t], nodes)[0])


# ----- Semigroup fields -----


class DescriptorKind(Enum):
    GRAD_HEAT = "grad_heat"
    GRAD_POISSON_FULL = "grad_poisson_full"
    M_POISSON_FULL = "m_poisson_full"
    M_HEAT_SCALAR = "m_heat_scalar"
    M_HEAT_FULL = "m_heat_full"
    M_GAP = "m_gap"


_FULL = (
    DescriptorKind.GRAD_POISSON_FULL,
    DescriptorKind.M_POISSON_FULL,
    DescriptorKind.M_HEAT_FULL,
)


@dataclass(frozen=True)
class FieldDescriptor:
    """Which function of L and which derivative produced a field.

    grad_heat           grad_y e^{-tL} f
    grad_poisson_full   t grad_{y,t} e^{-tL^(1/2)} f
    m_poisson_full(m)   t grad_{y,t} (t^2 L)^m e^{-tL^(1/2)} f
    m_heat_scalar(m)    (t^2 L)^m e^{-t^2 L} f
    m_heat_full(m)      t grad_{y,t} (t^2 L)^m e^{-t^2 L} f
    m_gap(m)            (t^2 L)^m (e^{-tL^(1/2)} - e^{-t^2 L}) f
    """

    kind: DescriptorKind
    m: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.kind, DescriptorKind):
            try:
                object.__setattr__(self, "kind", DescriptorKind(self.kind))
            except ValueError as e:
                raise ValueError(f"Unknown field descriptor: {self.kind}") from e
        if isinstance(self.m, bool) or int(self.m) != self.m or self.m < 0:
            raise ValueError(f"m must be a nonnegative integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        if self.m and self.kind in (DescriptorKind.GRAD_HEAT, DescriptorKind.GRAD_POISSON_FULL):
            raise ValueError(f"{self.kind.value} takes no power of L")

    @classmethod
    def parse(cls, text: str) -> FieldDescriptor:
        """'grad_heat' or 'm_poisson_full(1)'."""
        text = text.strip()
        if text.endswith(")") and "(" in text:
            name, _, arg = text[:-1].partition("(")
            try:
                return cls(name.strip(), int(arg))
            except ValueError as e:
                raise ValueError(f"Unknown field descriptor: {text}") from e
        return cls(text)

    def channels(self, n: int) -> int:
        if self.kind is DescriptorKind.GRAD_HEAT:
            return n
        return n + 1 if self.kind in _FULL else 1

    def __str__(self) -> str:
        if self.kind in (DescriptorKind.GRAD_HEAT, DescriptorKind.GRAD_POISSON_FULL):
            return self.kind.value
        return f"{self.kind.value}({self.m})"


@dataclass(frozen=True, eq=False)
class SemigroupField(HalfSpaceField):
    """A HalfSpaceField tagged with the descriptor that produced it."""

    descriptor: FieldDescriptor = FieldDescriptor(DescriptorKind.GRAD_HEAT)

    def __post_init__(self) -> None:
        super().__post_init__()
        expected = self.descriptor.channels(self.grid.n)
        if self.channels != expected:
            raise ValueError(
                f"{self.descriptor} needs {expected} channels, got {self.channels}"
            )


def _time_column(grid: Grid, power: float) -> np.ndarray:
    return (grid.times**power).reshape((grid.nt,) + (1,) * grid.n)


def _powered(
    op: EllipticOperator, f: SpatialFunction, m: int, grid: Grid, kind: str
) -> np.ndarray:
    """t^{2m} L^m S_t f for S_t the Poisson semigroup, the heat semigroup at t^2, or their gap."""
    g = np.asarray(f.values)
    for _ in range(m):
        g = op.apply(g)
    if kind == "poisson":
        u = poisson_many(op, g, grid.times)
    elif kind == "heat":
        u = heat_many(op, g, grid.times**2)
    else:
        u = poisson_many(op, g, grid.times) - heat_many(op, g, grid.times**2)
    if m:
        u = u * _time_column(grid, 2 * m)
    return u


def _full_gradient(u: np.ndarray, grid: Grid, difference: str) -> np.ndarray:
    """t grad_{y,t} u, spatial channels first; t d/dt is d/d(log t)."""
    gradient = face_gradient if difference == "face" else centered_gradient
    spatial = gradient(u, grid) * _time_column(grid, 1)
    temporal = np.gradient(u, grid.log_step, axis=0)
    return np.concatenate([spatial, temporal[np.newaxis]])


def build_field(
    op: EllipticOperator,
    f: SpatialFunction,
    descriptor: FieldDescriptor | str,
    grid: Grid | None = None,
    *,
    difference: str = "centered",
) -> SemigroupField:
    """Sample the half-space field named by descriptor on grid (default: the operator's grid).

    ``difference="face"`` swaps the centered spatial gradient for forward differences.
    """
    grid = op.grid if grid is None else grid
    if not grid.same_space(op.grid) or not f.grid.same_space(grid):
        raise ValueError("operator, function and field grid must share the spatial lattice")
    if difference not in ("centered", "face"):
        raise ValueError(f"Unknown difference scheme: {difference}")
    if not isinstance(descriptor, FieldDescriptor):
        descriptor = FieldDescriptor.parse(str(descriptor))
    kind, m = descriptor.kind, descriptor.m

    if kind is DescriptorKind.GRAD_HEAT:
        gradient = face_gradient if difference == "face" else centered_gradient
        values = gradient(heat_many(op, f, grid.times), grid)
    elif kind in (DescriptorKind.GRAD_POISSON_FULL, DescriptorKind.M_POISSON_FULL):
        values = _full_gradient(_powered(op, f, m, grid, "poisson"), grid, difference)
    elif kind is DescriptorKind.M_HEAT_FULL:
        values = _full_gradient(_powered(op, f, m, grid, "heat"), grid, difference)
    elif kind is DescriptorKind.M_HEAT_SCALAR:
        values = _powered(op, f, m, grid, "heat")
    else:
        values = _powered(op, f, m, grid, "gap")
    logger.debug("Built %s field on %d time nodes", descriptor, grid.nt)
    return SemigroupField(grid, values, descriptor)


# ----- Off-diagonal decay -----


@dataclass(frozen=True)
class OffDiagonalRecord:
    distance: float
    times: tuple[float, ...]
    amplitudes: tuple[float, ...]
    slope: float | None  # fitted d(log amplitude) / d(d^2/t); None when not fittable
    intercept: float | None


def set_distance(grid: Grid, E: np.ndarray, F: np.ndarray) -> float:
    """Smallest torus distance between cell centers of E and F."""
    coords = grid.coordinates().reshape(grid.n, -1).T
    best = math.inf
    for point in coords[E.ravel()]:
        best = min(best, float(grid.torus_distance(point)[F].min()))
    return best


def offdiag_decay(
    op: EllipticOperator,
    E: np.ndarray,
    F: np.ndarray,
    t_list: Sequence[float] | None = None,
    f: SpatialFunction | None = None,
) -> OffDiagonalRecord:
    """||e^{-tL}(f chi_E)||_{L2(F)} / ||f||_{L2(E)} per t, with a fit against d(E,F)^2/t.

    Without t_list the times put d^2/t on 8 geometric values in [20, 100].
    """
    grid = op.grid
    E = np.asarray(E, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if E.shape != grid.shape or F.shape != grid.shape:
        raise ValueError(f"cell sets must have shape {grid.shape}")
    if not E.any() or not F.any():
        raise ValueError("cell sets must be nonempty")
    if np.any(E & F):
        raise ValueError("E and F must be disjoint")
    source = np.where(E, 1.0 if f is None else f.values, 0.0)
    source_norm = float(np.sqrt(np.sum(np.abs(source) ** 2)))
    if source_norm == 0:
        raise ValueError("f vanishes on E")
    d = set_distance(grid, E, F)
    if t_list is None:
        t_list = d * d / np.geomspace(20.0, 100.0, 8)
    times = _check_times(t_list)
    states = heat_many(op, source, times)
    amplitudes = np.sqrt(np.sum(np.abs(states[:, F]) ** 2, axis=1)) / source_norm
    slope = intercept = None
    if len(times) >= 2 and np.all(amplitudes > 0):
        slope, intercept = (float(c) for c in np.polyfit(d * d / times, np.log(amplitudes), 1))
    else:
        logger.warning("Off-diagonal fit skipped: need two times with positive amplitude")
    return OffDiagonalRecord(d, tuple(times.tolist()), tuple(amplitudes.tolist()), slope, intercept)


# ----- Caccioppoli decomposition -----


@dataclass(frozen=True)
class CaccioppoliRecord:
    x: tuple[float, ...]
    lhs: float
    heat_scalar_term: float  # m times the (t^2 L)^m e^{-t^2 L} term; zero when m = 0
    heat_full_term: float
    gap_term: float
    ratio: float | None  # None: right-hand side vanishes


def caccioppoli_check(
    op: EllipticOperator,
    f: SpatialFunction,
    m: int,
    x_list: Sequence[float | Sequence[float]],
    grid: Grid | None = None,
) -> list[CaccioppoliRecord]:
    """Conical Poisson functional at aperture 1 against the three heat-side terms at aperture 2."""
    grid = op.grid if grid is None else grid
    q = grid.n + 1

    def density(kind: DescriptorKind) -> HalfSpaceField:
        built = build_field(op, f, FieldDescriptor(kind, m), grid)
        return HalfSpaceField(grid, built.magnitude_squared())

    lhs_density = density(DescriptorKind.M_POISSON_FULL)
    full_density = density(DescriptorKind.M_HEAT_FULL)
    gap_density = density(DescriptorKind.M_GAP)
    scalar_density = density(DescriptorKind.M_HEAT_SCALAR) if m else None
    floor = 1e-12 * float(np.abs(f.values).max())

    records = []
    for x in x_list:
        point = tuple(float(c) for c in np.atleast_1d(x))
        lhs = math.sqrt(cone_integral(lhs_density, point, 1.0, q))
        full = math.sqrt(cone_integral(full_density, point, 2.0, q))
        gap = math.sqrt(cone_integral(gap_density, point, 2.0, q))
        scalar = m * math.sqrt(cone_integral(scalar_density, point, 2.0, q)) if m else 0.0
        rhs = scalar + full + gap
        ratio = lhs / rhs if rhs > floor else None
        records.append(CaccioppoliRecord(point, lhs, scalar, full, gap, ratio))
    return records
