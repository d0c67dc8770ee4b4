"""
Bilinear saddle-point problems as bilevel equilibrium problems.

Gamma(u, v) = u^T M v + a^T u + b^T v on U x V, lower bifunction
f((u1, v1), (u2, v2)) = Gamma(u2, v1) - Gamma(u1, v2), whose operator is the
skew-affine B(u, v) = (M v + a, -M^T u - b) with L = ||M||_2.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .bifunctions import EquilibriumBifunction
from .errors import UsageError
from .geometry import BoxSet, DenseMatrix, Point, as_matrix, as_point, rowwise_inner, spectral_norm
from .services_fbf import BepInstance, Schedule, log_slope, SLOPE_EPS
from .operators import AffineMap

logger = logging.getLogger(__name__)

VERTEX_DIM_LIMIT = 8
SADDLE_TOL = 1e-9
EXAMPLE_SOLUTION = (0.0, 1.0)


@dataclass(frozen=True, eq=False)
class SaddleProblem:
    m: DenseMatrix
    a: Point
    b: Point
    u_box: BoxSet
    v_box: BoxSet

    def __post_init__(self):
        m = as_matrix(self.m, what="M")
        a = as_point(self.a, dim=m.shape[0], what="a")
        b = as_point(self.b, dim=m.shape[1], what="b")
        if self.u_box.dim != m.shape[0] or self.v_box.dim != m.shape[1]:
            raise UsageError(f"box dimensions ({self.u_box.dim}, {self.v_box.dim}) do not match M {m.shape}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim_u(self) -> int:
        return self.m.shape[0]

    @property
    def dim_v(self) -> int:
        return self.m.shape[1]

    @property
    def dim(self) -> int:
        return self.dim_u + self.dim_v

    @property
    def k(self) -> BoxSet:
        return self.u_box.product(self.v_box)

    def split(self, x: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise UsageError(f"point has dimension {x.shape[-1]}, expected {self.dim}")
        return x[..., :self.dim_u], x[..., self.dim_u:]

    def gamma(self, u: ArrayLike, v: ArrayLike) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return rowwise_inner(u @ self.m, v) + u @ self.a + v @ self.b

    def coupling(self, x1: ArrayLike, x2: ArrayLike) -> np.ndarray:
        """f(x1, x2) = Gamma(u2, v1) - Gamma(u1, v2)."""
        u1, v1 = self.split(x1)
        u2, v2 = self.split(x2)
        return self.gamma(u2, v1) - self.gamma(u1, v2)


def lower_operator(sp: SaddleProblem) -> AffineMap:
    """B(u, v) = [[0, M], [-M^T, 0]] (u, v) + (a, -b), certified by ||M||_2."""
    m, n = sp.dim_u, sp.dim_v
    block = np.zeros((m + n, m + n))
    block[:m, m:] = sp.m
    block[m:, :m] = -sp.m.T
    return AffineMap(block, np.concatenate([sp.a, -sp.b]), lipschitz=spectral_norm(sp.m),
                     name="saddle coupling")


def build_saddle_bep(sp: SaddleProblem, upper: EquilibriumBifunction, name: str = "saddle") -> BepInstance:
    if upper.dim != sp.dim:
        raise UsageError(f"upper bifunction has dimension {upper.dim}, saddle problem {sp.dim}")
    return BepInstance(lower_operator(sp), upper, sp.k, name=name)


def example_problem() -> SaddleProblem:
    """Gamma(u, v) = uv + u + v on [0, 1]^2; S_f = {(0, 1)}."""
    unit = BoxSet.unit(1)
    return SaddleProblem(np.array([[1.0]]), np.array([1.0]), np.array([1.0]), unit, unit)


def random_saddle_problem(rng: np.random.Generator, dim_u: int = 1, dim_v: int = 1) -> SaddleProblem:
    """Entries of M uniform in [-2, 2], of a and b in [-1, 1]; unit boxes."""
    return SaddleProblem(rng.uniform(-2.0, 2.0, size=(dim_u, dim_v)),
                         rng.uniform(-1.0, 1.0, size=dim_u), rng.uniform(-1.0, 1.0, size=dim_v),
                         BoxSet.unit(dim_u), BoxSet.unit(dim_v))


def _conjugates(p, q, beta):
    w1 = 2.0 * np.asarray(p, dtype=np.float64) / beta
    w2 = 2.0 * np.asarray(q, dtype=np.float64) / beta
    first = np.where(np.asarray(p) > beta, w1 - 3.0, -1.0)
    second = np.where(np.asarray(q) > -0.5 * np.asarray(beta), 1.0 + w2, 0.0)
    return first, second, w2


def example_conjugates(p: float, q: float, beta: float) -> Tuple[float, float, float]:
    """((Gamma(., 1))*(2p/beta), (-Gamma(0, .))*(2q/beta), sigma_{S_f}(2p/beta, 2q/beta))
    for the example problem at u* = (0, 1)."""
    if not beta > 0:
        raise UsageError(f"beta must be > 0, got {beta}")
    first, second, third = _conjugates(p, q, beta)
    return float(first), float(second), float(third)


def example_condition_term(p: float, q: float, beta: float) -> float:
    """Bracketed summand of the Fitzpatrick summability condition for the example."""
    first, second, third = example_conjugates(p, q, beta)
    return first + second - third


def fitzpatrick_grid(sp: SaddleProblem, u: ArrayLike, w: ArrayLike, grid: int = 21) -> float:
    """sup over y in K of <w, y> + f(y, u).

    The objective is affine in y, so the supremum sits at a vertex; vertices are
    enumerated up to dimension 8 and a uniform grid (a lower bound) is used above.
    """
    k = sp.k
    u = as_point(u, dim=sp.dim, what="u")
    w = as_point(w, dim=sp.dim, what="w")
    if not k.contains(u, tol=1e-12):
        raise UsageError("u must lie in K")
    if grid < 2:
        raise UsageError(f"grid needs at least 2 points per axis, got {grid}")
    if sp.dim <= VERTEX_DIM_LIMIT:
        ys = k.vertices()
    else:
        logger.warning("dimension %d above %d: Fitzpatrick supremum taken over a %d-point grid",
                       sp.dim, VERTEX_DIM_LIMIT, grid)
        ys = k.grid(grid)
    return float(np.max(ys @ w + sp.coupling(ys, u)))


def condition_57_terms(sched: Schedule, p: float, q: float, horizon: int,
                       relative: bool = False, lipschitz: float = 1.0) -> np.ndarray:
    """lam_n beta_n [conjugate sum - support term] for n = 1..horizon.

    With relative=True, p and q are read as multiples of beta_n (p_n = p * beta_n).
    """
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    lams, betas = sched.terms(lipschitz, horizon)
    pn = p * betas if relative else np.full(horizon, float(p))
    qn = q * betas if relative else np.full(horizon, float(q))
    first, second, third = _conjugates(pn, qn, betas)
    return lams * betas * (first + second - third)


def condition_57_partial_sum(sched: Schedule, p: float, q: float, horizon: int,
                             relative: bool = False, lipschitz: float = 1.0) -> float:
    return float(np.sum(condition_57_terms(sched, p, q, horizon, relative, lipschitz)))


def series_trend(terms: ArrayLike) -> str:
    """'zero', 'converging' or 'diverging' from the tail decay of the terms."""
    terms = np.asarray(terms, dtype=np.float64)
    if not np.any(terms):
        return "zero"
    n = np.arange(1, terms.shape[0] + 1, dtype=np.float64)
    half = slice(terms.shape[0] // 2, terms.shape[0])
    return "converging" if log_slope(n[half], terms[half]) < -1.0 - SLOPE_EPS else "diverging"


def saddle_points_grid(sp: SaddleProblem, grid: int = 101, tol: float = SADDLE_TOL) -> List[Point]:
    """Grid points (u, v) with max_v' Gamma(u, v') - min_u' Gamma(u', v) <= tol.

    Gamma is affine in each argument, so the inner max/min are taken over box
    vertices. Points are returned in lexicographic order.
    """
    pts = sp.k.grid(grid)
    us, vs = sp.split(pts)
    best_v = np.max([sp.gamma(us, np.broadcast_to(vv, vs.shape)) for vv in sp.v_box.vertices()], axis=0)
    worst_u = np.min([sp.gamma(np.broadcast_to(uu, us.shape), vs) for uu in sp.u_box.vertices()], axis=0)
    gap = best_v - worst_u
    return [pts[i] for i in np.flatnonzero(gap <= tol)]


def example_solution() -> Point:
    return np.array(EXAMPLE_SOLUTION)


def example_support(w: ArrayLike) -> float:
    """sigma_{S_f}(w) with S_f = {(0, 1)}."""
    return float(np.dot(example_solution(), as_point(w, dim=2, what="w")))
