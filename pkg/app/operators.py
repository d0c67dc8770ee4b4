"""
Monotone vector-field oracles B and the lower-level bifunction f(x, y) = <Bx, y - x>.

Lipschitz constants are certificates fixed at construction; the sampled checks in
this module validate them, they never replace them.
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import UsageError
from .geometry import (BoxSet, Point, as_matrix, as_point, rowwise_inner,
                       sample_pairs, sampling_region, spectral_norm)

logger = logging.getLogger(__name__)

MONOTONE_TOL = 1e-10

Bifunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class MonotoneMap:
    """Single-valued operator B: R^d -> R^d with a Lipschitz certificate.

    `fn` maps a point of shape (d,) to (d,). When `vectorized` is true it must
    also map a stack (m, d) row by row; otherwise stacks are evaluated in a loop.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], lipschitz: float, dim: int,
                 name: str = "operator", vectorized: bool = False):
        if lipschitz < 0 or not np.isfinite(lipschitz):
            raise UsageError(f"Lipschitz certificate must be finite and >= 0, got {lipschitz}")
        if dim < 1:
            raise UsageError(f"dimension must be >= 1, got {dim}")
        self.fn = fn
        self.lipschitz = float(lipschitz)
        self.dim = int(dim)
        self.name = name
        self.vectorized = vectorized

    def __call__(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise UsageError(f"{self.name}: point has dimension {x.shape[-1]}, expected {self.dim}")
        if x.ndim == 1 or self.vectorized:
            return np.asarray(self.fn(x), dtype=np.float64)
        flat = x.reshape(-1, self.dim)
        out = np.array([self.fn(row) for row in flat], dtype=np.float64)
        return out.reshape(x.shape)

    @property
    def is_zero(self) -> bool:
        return False

    def product(self, other: "MonotoneMap") -> "MonotoneMap":
        """(A1 x A2)(u, v) = (A1 u, A2 v) on the product space."""
        m = self.dim

        def fn(z):
            return np.concatenate([self(z[..., :m]), other(z[..., m:])], axis=-1)

        return MonotoneMap(fn, max(self.lipschitz, other.lipschitz), m + other.dim,
                           name=f"{self.name} x {other.name}",
                           vectorized=True)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim}, L={self.lipschitz:.6g})"


class AffineMap(MonotoneMap):
    """B x = matrix @ x + offset with square matrix.

    Monotone iff the symmetric part of the matrix is positive semidefinite; that
    is checked here and `check=False` lets anti-monotone maps through for
    negative controls. The certificate defaults to the spectral norm.
    """

    def __init__(self, matrix: ArrayLike, offset: Optional[ArrayLike] = None,
                 lipschitz: Optional[float] = None, name: str = "affine", check: bool = True):
        mat = as_matrix(matrix, what=f"{name} matrix")
        if mat.shape[0] != mat.shape[1]:
            raise UsageError(f"{name} matrix must be square, got shape {mat.shape}")
        dim = mat.shape[0]
        off = np.zeros(dim) if offset is None else as_point(offset, dim=dim, what=f"{name} offset")
        sym = 0.5 * (mat + mat.T)
        self.min_symmetric_eigenvalue = float(np.min(np.linalg.eigvalsh(sym)))
        self.monotone = self.min_symmetric_eigenvalue >= -MONOTONE_TOL
        if check and not self.monotone:
            raise UsageError(f"{name} is not monotone: symmetric part has eigenvalue "
                             f"{self.min_symmetric_eigenvalue:.3e}")
        if lipschitz is None:
            lipschitz = spectral_norm(mat)
        self.matrix = mat
        self.offset = off
        super().__init__(self._apply, lipschitz, dim, name=name, vectorized=True)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix.T + self.offset

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix) and not np.any(self.offset)

    @property
    def is_skew(self) -> bool:
        return bool(np.allclose(self.matrix, -self.matrix.T, atol=0.0, rtol=0.0))


def affine_eval(m: AffineMap, x: ArrayLike) -> Point:
    """matrix @ x + offset."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dim:
        raise UsageError(f"dimension mismatch: point has {x.shape[-1]} coordinates, map has {m.dim}")
    return m(x)


def zero_map(dim: int) -> AffineMap:
    return AffineMap(np.zeros((dim, dim)), lipschitz=0.0, name="zero")


def identity_map(dim: int, scale: float = 1.0) -> AffineMap:
    return AffineMap(scale * np.eye(dim), lipschitz=abs(scale), name=f"{scale:g}*identity",
                     check=scale >= 0)


def constant_map(value: ArrayLike) -> AffineMap:
    v = as_point(value, what="constant value")
    return AffineMap(np.zeros((v.shape[0], v.shape[0])), v, lipschitz=0.0, name="constant")


def quadratic_gradient(center: ArrayLike, weight: float) -> AffineMap:
    """Gradient w (x - c) of phi(x) = (w/2)||x - c||^2."""
    if weight < 0:
        raise UsageError(f"weight must be >= 0, got {weight}")
    c = as_point(center, what="center")
    return AffineMap(weight * np.eye(c.shape[0]), -weight * c, lipschitz=float(weight),
                     name="quadratic gradient")


def lower_bifunction(b: MonotoneMap) -> Bifunction:
    """f(x, y) = <Bx, y - x>, broadcasting over leading axes."""

    def f(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return rowwise_inner(b(x), y - x)

    return f


def _default_region(b: MonotoneMap, region: Optional[BoxSet]) -> BoxSet:
    return region if region is not None else sampling_region(BoxSet.unit(b.dim))


def monotonicity_deficit(b: MonotoneMap, samples: int, seed: int,
                         region: Optional[BoxSet] = None) -> float:
    """Minimum over sampled pairs of <Bx - By, x - y>."""
    xs, ys = sample_pairs(_default_region(b, region), samples, seed)
    vals = rowwise_inner(b(xs) - b(ys), xs - ys)
    return float(np.min(vals))


def lipschitz_witness(b: MonotoneMap, samples: int, seed: int,
                      region: Optional[BoxSet] = None) -> Tuple[float, Point, Point]:
    """Largest sampled ratio ||Bx - By|| / ||x - y|| with the pair attaining it."""
    xs, ys = sample_pairs(_default_region(b, region), samples, seed)
    ratios = np.linalg.norm(b(xs) - b(ys), axis=1) / np.linalg.norm(xs - ys, axis=1)
    worst = int(np.argmax(ratios))
    return float(ratios[worst]), xs[worst], ys[worst]


def lipschitz_estimate(b: MonotoneMap, samples: int, seed: int,
                       region: Optional[BoxSet] = None) -> float:
    """Largest sampled ratio ||Bx - By|| / ||x - y||."""
    ratio, _, _ = lipschitz_witness(b, samples, seed, region)
    if ratio > b.lipschitz * (1 + 1e-9) + 1e-12:
        logger.warning("%s: sampled Lipschitz ratio %.12g exceeds certificate %.12g",
                       b.name, ratio, b.lipschitz)
    return ratio


def bifunction_monotonicity_gap(b: MonotoneMap, samples: int, seed: int,
                                region: Optional[BoxSet] = None) -> float:
    """Largest sampled f(x, y) + f(y, x); non-positive for monotone B."""
    f = lower_bifunction(b)
    xs, ys = sample_pairs(_default_region(b, region), samples, seed)
    return float(np.max(f(xs, ys) + f(ys, xs)))
