"""
Upper-level equilibrium bifunctions g and their resolvents J_lambda^g.

J_lambda^g(x) is the unique z in K with
    g(z, y) + (1/lambda) <z - x, y - z> >= 0   for all y in K.
Two families ship: the quadratic ProxBifunction (closed form) and the operator
bifunctions g(x, y) = <Gx, y - x> (damped projected fixed-point inner solve).
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConvergenceError, UsageError
from .geometry import (BoxSet, as_point, rowwise_inner, sample_pairs,
                       sampling_region)
from .operators import MonotoneMap, zero_map

logger = logging.getLogger(__name__)

RESOLVENT_TOL = 1e-10
RESOLVENT_MAX_INNER = 1_000_000
CERTIFICATE_GRID = 21


@dataclass(frozen=True)
class ResolventOracle:
    kind: str  # "closed_form_prox" | "operator_inner_solve"
    tolerance: float = RESOLVENT_TOL
    max_inner: int = RESOLVENT_MAX_INNER


class EquilibriumBifunction(ABC):
    """Bifunction g: K x K -> R with g(x, x) = 0, convex in y and monotone."""

    feasible_set: BoxSet
    oracle: ResolventOracle

    @abstractmethod
    def evaluate(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        """g(x, y), broadcasting over leading axes."""

    @abstractmethod
    def resolvent(self, lam: float, x: ArrayLike) -> np.ndarray:
        """J_lambda^g(x) for a point or a stack of points."""

    def __call__(self, x, y):
        return self.evaluate(x, y)

    @property
    def dim(self) -> int:
        return self.feasible_set.dim

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def affine_in_second(self) -> bool:
        """True when y -> g(x, y) is affine, so box minima sit at vertices."""
        return False


class ProxBifunction(EquilibriumBifunction):
    """g(x, y) = phi(y) - phi(x) with phi(x) = (w/2)||x - c||^2."""

    def __init__(self, center: ArrayLike, weight: float, feasible_set: BoxSet):
        if weight < 0:
            raise UsageError(f"weight must be >= 0, got {weight}")
        self.center = as_point(center, dim=feasible_set.dim, what="prox center")
        self.weight = float(weight)
        self.feasible_set = feasible_set
        self.oracle = ResolventOracle("closed_form_prox", tolerance=0.0, max_inner=0)

    def phi(self, x: ArrayLike) -> np.ndarray:
        d = np.asarray(x, dtype=np.float64) - self.center
        return 0.5 * self.weight * rowwise_inner(d, d)

    def evaluate(self, x, y):
        return self.phi(y) - self.phi(x)

    def resolvent(self, lam, x):
        return prox_resolvent(self, lam, x)

    @property
    def is_zero(self) -> bool:
        return self.weight == 0.0

    @property
    def affine_in_second(self) -> bool:
        return self.is_zero

    def __repr__(self):
        return f"ProxBifunction(center={self.center.tolist()}, weight={self.weight:g})"


def zero_bifunction(feasible_set: BoxSet) -> ProxBifunction:
    """g = 0; its resolvent is the projection onto K."""
    return ProxBifunction(np.zeros(feasible_set.dim), 0.0, feasible_set)


class OperatorBifunction(EquilibriumBifunction):
    """g(x, y) = <Gx, y - x> for a monotone Lipschitz operator G."""

    def __init__(self, operator: MonotoneMap, feasible_set: BoxSet,
                 tolerance: float = RESOLVENT_TOL, max_inner: int = RESOLVENT_MAX_INNER):
        if operator.dim != feasible_set.dim:
            raise UsageError(f"operator dimension {operator.dim} does not match K dimension {feasible_set.dim}")
        self.operator = operator
        self.feasible_set = feasible_set
        self.oracle = ResolventOracle("operator_inner_solve", tolerance=tolerance, max_inner=max_inner)

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return rowwise_inner(self.operator(x), y - x)

    def resolvent(self, lam, x):
        return operator_resolvent(self, lam, x, self.oracle.tolerance, self.oracle.max_inner)

    @property
    def is_zero(self) -> bool:
        return bool(getattr(self.operator, "is_zero", False))

    @property
    def affine_in_second(self) -> bool:
        return True


class PairedOperatorBifunction(OperatorBifunction):
    """g((u1, v1), (u2, v2)) = <A1 u1, u2 - u1> + <A2 v1, v2 - v1>."""

    def __init__(self, a1: MonotoneMap, a2: MonotoneMap, feasible_set: BoxSet,
                 tolerance: float = RESOLVENT_TOL, max_inner: int = RESOLVENT_MAX_INNER):
        self.a1 = a1
        self.a2 = a2
        super().__init__(a1.product(a2), feasible_set, tolerance, max_inner)

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.a1.dim
        u1, v1 = x[..., :m], x[..., m:]
        u2, v2 = y[..., :m], y[..., m:]
        return rowwise_inner(self.a1(u1), u2 - u1) + rowwise_inner(self.a2(v1), v2 - v1)

    def __repr__(self):
        return f"PairedOperatorBifunction(a1={self.a1!r}, a2={self.a2!r})"


def paired_zero(m: int, n: int, feasible_set: BoxSet) -> PairedOperatorBifunction:
    return PairedOperatorBifunction(zero_map(m), zero_map(n), feasible_set)


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise UsageError(f"resolvent parameter lambda must be > 0, got {lam}")


def prox_resolvent(g: ProxBifunction, lam: float, x: ArrayLike) -> np.ndarray:
    """project_box((x + lam*w*c) / (1 + lam*w), K); exact for a separable quadratic."""
    _check_lambda(lam)
    x = np.asarray(x, dtype=np.float64)
    lw = lam * g.weight
    return g.feasible_set.project((x + lw * g.center) / (1.0 + lw))


def operator_resolvent(g: OperatorBifunction, lam: float, x: ArrayLike,
                       tol: float = RESOLVENT_TOL, max_inner: int = RESOLVENT_MAX_INNER,
                       verify: bool = True) -> np.ndarray:
    """Solve <lam*G z + z - x, y - z> >= 0 for all y in K.

    z -> lam*G z + z - x is 1-strongly monotone and (1 + lam*L)-Lipschitz, so the
    projected step with tau = 1/(1 + lam*L)^2 contracts. Stacks of points are
    iterated together until the largest change is <= tol.
    """
    _check_lambda(lam)
    x = np.asarray(x, dtype=np.float64)
    k = g.feasible_set
    op = g.operator
    tau = 1.0 / (1.0 + lam * op.lipschitz) ** 2
    z = k.project(x)
    change = np.inf
    for it in range(1, max_inner + 1):
        z_new = k.project(z - tau * (lam * op(z) + z - x))
        change = float(np.max(np.abs(z_new - z))) if z.size else 0.0
        z = z_new
        if change <= tol:
            break
    else:
        raise ConvergenceError("resolvent inner solve exhausted max_inner",
                               last_iterate=z, residual=change, iterations=max_inner)
    logger.debug("operator resolvent: %d inner iterations, last change %.3e", it, change)

    if verify and z.ndim == 1:
        cert = resolvent_certificate(g, lam, x, z)
        # inner-solve error is amplified by 1/lam and by the diameter of K
        allowed = 10.0 * tol * (1.0 + 1.0 / lam) * (1.0 + k.diameter)
        if cert < -allowed:
            logger.warning("resolvent certificate %.3e below -%.3e (lambda=%.3e)", cert, allowed, lam)
    return z


def resolvent_certificate(g: EquilibriumBifunction, lam: float, x: ArrayLike, z: ArrayLike,
                          grid: int = CERTIFICATE_GRID) -> float:
    """min over y in a uniform grid of K of g(z, y) + (1/lam) <z - x, y - z>.

    For bifunctions affine in y the minimum over the box is attained at a
    vertex, and the vertex set (contained in every grid) is used.
    """
    _check_lambda(lam)
    k = g.feasible_set
    x = as_point(x, dim=k.dim)
    z = as_point(z, dim=k.dim, what="resolvent candidate")
    if not k.contains(z, tol=1e-12):
        raise UsageError("resolvent candidate z must lie in K")
    ys = k.vertices() if g.affine_in_second else k.grid(grid)
    vals = g.evaluate(z, ys) + rowwise_inner(z - x, ys - z) / lam
    return float(np.min(vals))


def firm_nonexpansiveness_gap(g: EquilibriumBifunction, lam: float, samples: int, seed: int,
                              region: Optional[BoxSet] = None) -> float:
    """Largest sampled ||Jx - Jy||^2 - <Jx - Jy, x - y>; <= 0 for a resolvent."""
    xs, ys = sample_pairs(region or sampling_region(g.feasible_set), samples, seed)
    dj = g.resolvent(lam, xs) - g.resolvent(lam, ys)
    return float(np.max(rowwise_inner(dj, dj) - rowwise_inner(dj, xs - ys)))


def bifunction_axioms(g: EquilibriumBifunction, samples: int, seed: int) -> Dict[str, Any]:
    """Worst sampled violations of g(x,x)=0, convexity in y and monotonicity on K."""
    rng = np.random.default_rng(seed)
    k = g.feasible_set
    xs, ys, zs = (k.sample(rng, samples) for _ in range(3))
    diag = float(np.max(np.abs(g.evaluate(xs, xs))))
    mid = g.evaluate(xs, 0.5 * (ys + zs)) - 0.5 * (g.evaluate(xs, ys) + g.evaluate(xs, zs))
    mono = g.evaluate(xs, ys) + g.evaluate(ys, xs)
    return {
        "diagonal_max_abs": diag,
        "convexity_gap": float(np.max(mid)),
        "monotonicity_gap": float(np.max(mono)),
        "passed": diag <= 1e-10 and float(np.max(mid)) <= 1e-10 and float(np.max(mono)) <= 1e-10,
    }
