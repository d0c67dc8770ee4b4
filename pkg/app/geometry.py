"""
Finite-dimensional geometry: points of R^d, box feasible sets, projections and
the spectral norm certificate used for Lipschitz constants.

Points are 1-D float64 arrays; every function that takes a point also accepts a
stack of points with shape (m, d) unless noted otherwise.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConvergenceError, NumericalError, UsageError

logger = logging.getLogger(__name__)

Point = NDArray[np.float64]
DenseMatrix = NDArray[np.float64]

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 10_000


def check_finite(arr: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} contains NaN or Inf")
    return arr


def as_point(values: ArrayLike, dim: Optional[int] = None, what: str = "point") -> Point:
    """Coerce to a finite 1-D float64 array, optionally checking its dimension."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise UsageError(f"{what} must be one-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise UsageError(f"{what} has dimension {x.shape[0]}, expected {dim}")
    return check_finite(x, what)


def as_matrix(values: ArrayLike, what: str = "matrix") -> DenseMatrix:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise UsageError(f"{what} must be two-dimensional, got shape {m.shape}")
    return check_finite(m, what)


def _check_dims(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise UsageError(f"dimension mismatch between {what}: {a.shape[-1]} vs {b.shape[-1]}")


def inner(a: ArrayLike, b: ArrayLike) -> float:
    """Euclidean inner product of two points."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch in inner product: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def rowwise_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner products along the last axis, broadcasting leading axes."""
    _check_dims(a, b)
    return np.einsum("...i,...i->...", a, b)


def norm(a: ArrayLike) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Closed box K = [lower_1, upper_1] x ... x [lower_d, upper_d]."""

    lower: Point
    upper: Point
    _vertices: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        lo = as_point(self.lower, what="box lower bound")
        hi = as_point(self.upper, dim=lo.shape[0], what="box upper bound")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise UsageError(f"empty box: lower[{bad}]={lo[bad]} > upper[{bad}]={hi[bad]}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "BoxSet":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def from_intervals(cls, intervals: Iterable[Tuple[float, float]]) -> "BoxSet":
        pairs = [tuple(iv) for iv in intervals]
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    def center(self) -> Point:
        return 0.5 * (self.lower + self.upper)

    @property
    def diameter(self) -> float:
        return norm(self.upper - self.lower)

    def project(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise UsageError(f"dimension mismatch: point has {x.shape[-1]} coordinates, box has {self.dim}")
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: ArrayLike, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        _check_dims(x, self.lower, "point and box")
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def product(self, other: "BoxSet") -> "BoxSet":
        return BoxSet(np.concatenate([self.lower, other.lower]),
                      np.concatenate([self.upper, other.upper]))

    def inflated(self, factor: float) -> "BoxSet":
        """Box with the same center and half-widths scaled by factor."""
        half = 0.5 * (self.upper - self.lower) * factor
        return BoxSet(self.center - half, self.center + half)

    def vertices(self) -> np.ndarray:
        """All 2^d vertices, lexicographically ordered (lower before upper)."""
        if not self._vertices:
            corners = itertools.product(*zip(self.lower, self.upper))
            self._vertices.append(np.unique(np.array(list(corners), dtype=np.float64), axis=0))
        return self._vertices[0]

    def axis_points(self, points_per_axis: int) -> list:
        if points_per_axis < 2:
            raise UsageError(f"grid needs at least 2 points per axis, got {points_per_axis}")
        return [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(self.lower, self.upper)]

    def grid(self, points_per_axis: int) -> np.ndarray:
        """Uniform grid of shape (points_per_axis**d, d), lexicographic order."""
        axes = self.axis_points(points_per_axis)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def spacing(self, points_per_axis: int) -> float:
        """Largest coordinate spacing of the uniform grid."""
        return float(np.max(self.upper - self.lower)) / (points_per_axis - 1)

    def sample(self, rng: np.random.Generator, samples: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(samples, self.dim))


def project_box(x: ArrayLike, k: BoxSet) -> Point:
    """Coordinatewise clamp of x onto K."""
    return k.project(x)


def sampling_region(k: BoxSet, factor: float = 2.0) -> BoxSet:
    """Neighbourhood of K used by sampled operator checks.

    Forward steps leave K, so checks cover the bounding box inflated by factor;
    degenerate (zero-width) coordinates get unit width.
    """
    lo, hi = k.lower.copy(), k.upper.copy()
    flat = hi - lo <= 0.0
    lo[flat] -= 0.5
    hi[flat] += 0.5
    return BoxSet(lo, hi).inflated(factor)


def sample_pairs(region: BoxSet, samples: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded random pairs (X, Y) in region with every pair distinct."""
    if samples < 1:
        raise UsageError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    xs = region.sample(rng, samples)
    ys = region.sample(rng, samples)
    same = np.all(xs == ys, axis=1)
    while np.any(same):
        ys[same] = region.sample(rng, int(same.sum()))
        same = np.all(xs == ys, axis=1)
    return xs, ys


def _start_vectors(n: int):
    ones = np.ones(n) / np.sqrt(n)
    yield ones
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0) / np.sqrt(n)
    yield alt
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        yield e


def _certify(mat: np.ndarray, sigma: float, tol: float) -> float:
    """Amount by which sigma misses the eigensolver value of ||M||_2 beyond relative tol; > 0 fails."""
    ref = float(np.sqrt(max(np.linalg.eigvalsh(mat.T @ mat)[-1], 0.0)))
    return abs(sigma - ref) - tol * ref


def spectral_norm(m: ArrayLike, tol: float = SPECTRAL_TOL, max_iter: int = SPECTRAL_MAX_ITER) -> float:
    """Largest singular value of m by power iteration on m^T m.

    The start vector is the normalized all-ones vector so the certificate is
    reproducible. If it lies in the null space of m another deterministic start
    is used. Iteration stops once the eigen-residual ||m^T m v - sigma^2 v|| is
    at most tol * sigma^2, and the estimate is only returned if it agrees with
    the eigenvalue reference to relative tol. Otherwise ConvergenceError carries
    the last estimate.
    """
    if tol <= 0:
        raise UsageError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise UsageError(f"max_iter must be >= 1, got {max_iter}")
    mat = as_matrix(m)
    if not np.any(mat):
        return 0.0

    for v in _start_vectors(mat.shape[1]):
        if np.linalg.norm(mat @ v) > 0.0:
            break

    sigma, residual, it = 0.0, np.inf, 0
    for it in range(1, max_iter + 1):
        w = mat.T @ (mat @ v)
        sigma2 = float(v @ w)
        residual = float(np.linalg.norm(w - sigma2 * v))
        sigma = float(np.sqrt(max(sigma2, 0.0)))
        if residual <= tol * sigma2:
            break
        v = w / np.linalg.norm(w)

    excess = _certify(mat, sigma, tol)
    if excess > 0.0:
        raise ConvergenceError("power iteration did not reach the requested accuracy",
                               last_iterate=[sigma], residual=residual, iterations=it)
    logger.debug("spectral norm %.17g after %d power iterations", sigma, it)
    return sigma
