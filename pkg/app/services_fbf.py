"""
Discrete forward-backward-forward iteration for bilevel equilibrium problems.

    y_n     = J_{lam_n}^g (x_n - lam_n beta_n B x_n)
    x_{n+1} = y_n + lam_n beta_n (B x_n - B y_n)

Iterations are numbered n = 1, 2, ...; schedules are evaluated at n. Iterates are
never projected back onto K between steps.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from .bifunctions import EquilibriumBifunction
from .errors import UsageError
from .geometry import BoxSet, Point, as_point, check_finite, norm
from .operators import AffineMap, MonotoneMap, lower_bifunction

logger = logging.getLogger(__name__)

SCHEDULE_FAMILIES = ("constant", "power_growth", "offset_power", "summable")
SLOPE_EPS = 0.05
FITZPATRICK_GRID = 21
SLACK_TOL = 1e-8  # allowed shortfall of the one-step Fejer inequality


@dataclass(frozen=True)
class Schedule:
    """Parameter sequences lam_n, beta_n.

    beta_n by family:
        constant      beta0
        power_growth  beta0 * (1 + n)**growth
        offset_power  beta0 + n**growth
        summable      beta0, with lam_n beta_n = rho * n**(-decay)
    In coupled mode lam_n = rho / (L beta_n) whenever L > 0; otherwise lam_n = lam0.
    """

    family: str = "power_growth"
    lam0: float = 1.0
    beta0: float = 1.0
    growth: float = 0.0
    rho: float = 0.9
    coupled: bool = True
    decay: float = 2.0

    def __post_init__(self):
        if self.family not in SCHEDULE_FAMILIES:
            raise UsageError(f"unknown schedule family {self.family!r}; expected one of {SCHEDULE_FAMILIES}")
        if not self.lam0 > 0 or not self.beta0 > 0:
            raise UsageError(f"lam0 and beta0 must be > 0, got {self.lam0}, {self.beta0}")
        if self.growth < 0:
            raise UsageError(f"growth exponent must be >= 0, got {self.growth}")
        if self.family == "summable":
            if not self.rho > 0 or not self.decay > 0:
                raise UsageError("summable schedule needs rho > 0 and decay > 0")
        elif self.coupled and not 0 < self.rho < 1:
            raise UsageError(f"coupled schedule needs 0 < rho < 1, got {self.rho}")

    def betas(self, n: ArrayLike) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if self.family == "power_growth":
            return self.beta0 * (1.0 + n) ** self.growth
        if self.family == "offset_power":
            return self.beta0 + n ** self.growth
        return np.full_like(n, self.beta0)

    def lams(self, n: ArrayLike, lipschitz: float) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        beta = self.betas(n)
        if self.family == "summable":
            return self.rho * n ** (-self.decay) / beta
        if self.coupled and lipschitz > 0:
            return self.rho / (lipschitz * beta)
        return np.full_like(n, self.lam0)

    def terms(self, lipschitz: float, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
        """(lam_n, beta_n) for n = 1..horizon."""
        n = np.arange(1, horizon + 1, dtype=np.float64)
        return self.lams(n, lipschitz), self.betas(n)


@dataclass(frozen=True)
class StoppingRule:
    tol_gap: float = 1e-8  # ||x_n - y_n||
    tol_step: float = 1e-8  # ||x_{n+1} - x_n||
    max_iter: int = 100_000
    exact: bool = False  # stop only when x_{n+1} == x_n

    def __post_init__(self):
        if self.max_iter < 1:
            raise UsageError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol_gap < 0 or self.tol_step < 0:
            raise UsageError("stopping tolerances must be >= 0")


@dataclass
class BepInstance:
    """Lower operator B (f(x,y) = <Bx, y-x>), upper bifunction g and feasible box K."""

    lower: MonotoneMap
    upper: EquilibriumBifunction
    k: BoxSet
    name: str = "bep"

    def __post_init__(self):
        if self.lower.dim != self.k.dim or self.upper.dim != self.k.dim:
            raise UsageError(f"inconsistent dimensions: B={self.lower.dim}, g={self.upper.dim}, K={self.k.dim}")
        if (self.lower.lipschitz == 0 and isinstance(self.lower, AffineMap)
                and np.any(self.lower.matrix)):
            raise UsageError("Lipschitz certificate 0 given for a non-constant affine B")

    @property
    def dim(self) -> int:
        return self.k.dim

    @property
    def lipschitz(self) -> float:
        return self.lower.lipschitz

    def f(self, x, y):
        return lower_bifunction(self.lower)(x, y)

    def lower_affine_in_first(self) -> bool:
        """True when y -> f(y, u) is affine (skew or constant affine B)."""
        return isinstance(self.lower, AffineMap) and self.lower.is_skew


@dataclass(frozen=True)
class IterationRecord:
    n: int
    x: Point
    y: Point
    lam: float
    beta: float
    gap: float  # ||x_n - y_n||
    step: float  # ||x_{n+1} - x_n||
    dist_ref: float = math.nan
    slack: float = math.nan
    coupling_ref: float = math.nan  # f(u, y_n)


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    final_point: Optional[Point] = None
    reference: Optional[Point] = None
    slack_violations: int = 0
    first_violation: Optional[int] = None  # iteration index n

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return 0 if not self.records else int(self.records[0].x.shape[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([iteration_row(r) for r in self.records], columns=iteration_columns(self.dim))


def iteration_columns(dim: int) -> List[str]:
    return (["n"] + [f"x{i}" for i in range(dim)] + [f"y{i}" for i in range(dim)]
            + ["lambda", "beta", "res_fix", "res_gap", "dist_ref", "prop31_slack"])


def iteration_row(r: IterationRecord) -> Dict[str, Any]:
    row: Dict[str, Any] = {"n": r.n}
    row.update({f"x{i}": float(v) for i, v in enumerate(r.x)})
    row.update({f"y{i}": float(v) for i, v in enumerate(r.y)})
    row.update({"lambda": r.lam, "beta": r.beta, "res_fix": r.step, "res_gap": r.gap,
                "dist_ref": r.dist_ref, "prop31_slack": r.slack})
    return row


def _check_step_bound(lam: float, beta: float, lipschitz: float) -> None:
    if not lam > 0 or not beta > 0:
        raise UsageError(f"lambda and beta must be > 0, got {lam}, {beta}")
    if lam * beta * lipschitz >= 1.0:
        raise UsageError(f"step bound violated: lambda*beta*L = {lam * beta * lipschitz:.6g} >= 1")


def fbf_step(inst: BepInstance, x: ArrayLike, lam: float, beta: float) -> Tuple[Point, Point]:
    """One forward-backward-forward step; returns (y, x_next). x_next may leave K."""
    _check_step_bound(lam, beta, inst.lipschitz)
    x = np.asarray(x, dtype=np.float64)
    s = lam * beta
    bx = inst.lower(x)
    y = inst.upper.resolvent(lam, x - s * bx)
    x_next = y + s * (bx - inst.lower(y))
    return check_finite(y, "y"), check_finite(x_next, "x_next")


def fitzpatrick_zero_term(inst: BepInstance, u: ArrayLike, grid: int = FITZPATRICK_GRID) -> float:
    """F_B(u, 0) - sigma_{S_f}(0) = sup_{y in K} f(y, u).

    Exact (vertex enumeration) when f(., u) is affine; otherwise the supremum over
    the uniform grid together with the vertices, a lower bound of the true value.
    """
    u = as_point(u, dim=inst.dim, what="reference point")
    k = inst.k
    ys = k.vertices() if inst.lower_affine_in_first() else np.vstack([k.grid(grid), k.vertices()])
    return float(np.max(inst.f(ys, u)))


def prop31_slack(inst: BepInstance, u: ArrayLike, x_n: ArrayLike, y_n: ArrayLike, x_next: ArrayLike,
                 lam: float, beta: float, fitzpatrick: Optional[float] = None,
                 grid: int = FITZPATRICK_GRID) -> float:
    """RHS - LHS of the one-step Fejer estimate with p = 0.

        LHS = a_{n+1} - a_n + lam beta f(u, y_n),   a_n = ||x_n - u||^2
        RHS = -(1 - lam^2 beta^2 L^2) ||x_n - y_n||^2 + lam beta sup_{y in K} f(y, u)
    """
    _check_step_bound(lam, beta, inst.lipschitz)
    u = as_point(u, dim=inst.dim, what="reference point")
    x_n, y_n, x_next = (np.asarray(v, dtype=np.float64) for v in (x_n, y_n, x_next))
    s = lam * beta
    if fitzpatrick is None:
        fitzpatrick = fitzpatrick_zero_term(inst, u, grid)
    a_n = float(np.sum((x_n - u) ** 2))
    a_next = float(np.sum((x_next - u) ** 2))
    lhs = a_next - a_n + s * float(inst.f(u, y_n))
    rhs = -(1.0 - (s * inst.lipschitz) ** 2) * float(np.sum((x_n - y_n) ** 2)) + s * fitzpatrick
    return rhs - lhs


def validate_schedule(sched: Schedule, lipschitz: float, horizon: int) -> None:
    """Reject schedules whose first `horizon` terms break lam*beta*L < 1."""
    lams, betas = sched.terms(lipschitz, horizon)
    worst = float(np.max(lams * betas)) * lipschitz
    if worst >= 1.0:
        n = int(np.argmax(lams * betas)) + 1
        raise UsageError(f"schedule violates the step bound lambda*beta*L < 1 at n={n} "
                         f"(lambda*beta*L = {worst:.6g})")


def run_fbf(inst: BepInstance, x0: ArrayLike, sched: Schedule, stop: StoppingRule = StoppingRule(),
            reference: Optional[ArrayLike] = None) -> IterationTrace:
    """Iterate until both ||x_n - y_n|| and ||x_{n+1} - x_n|| are within tolerance.

    Exhausting max_iter returns a trace with converged=False. With a reference
    u in S_f the trace also records ||x_n - u|| and the p = 0 Fejer slack;
    iterations where the slack falls below -SLACK_TOL are counted in
    slack_violations and the first one is logged at WARNING.
    """
    x = as_point(x0, dim=inst.dim, what="x0")
    if not inst.k.contains(x, tol=1e-12):
        logger.warning("x0=%s lies outside K", x.tolist())
    L = inst.lipschitz
    validate_schedule(sched, L, stop.max_iter)
    lams, betas = sched.terms(L, stop.max_iter)

    u = None if reference is None else as_point(reference, dim=inst.dim, what="reference point")
    fitz = None if u is None else fitzpatrick_zero_term(inst, u)
    trace = IterationTrace(reference=u)
    logger.debug("run_fbf %s: L=%.6g schedule=%s max_iter=%d", inst.name, L, sched, stop.max_iter)

    for idx in range(stop.max_iter):
        lam, beta = float(lams[idx]), float(betas[idx])
        y, x_next = fbf_step(inst, x, lam, beta)
        gap = norm(x - y)
        step = norm(x_next - x)
        if u is None:
            dist = slack = coupling = math.nan
        else:
            dist = norm(x - u)
            slack = prop31_slack(inst, u, x, y, x_next, lam, beta, fitzpatrick=fitz)
            coupling = float(inst.f(u, y))
        trace.records.append(IterationRecord(idx + 1, x.copy(), y, lam, beta, gap, step,
                                             dist, slack, coupling))
        if slack < -SLACK_TOL:
            trace.slack_violations += 1
            if trace.first_violation is None:
                trace.first_violation = idx + 1
                logger.warning("run_fbf %s: Fejer inequality violated at n=%d (slack %.3e); "
                               "check the Lipschitz certificate and the reference point",
                               inst.name, idx + 1, slack)
        done = np.array_equal(x_next, x) if stop.exact else (gap <= stop.tol_gap and step <= stop.tol_step)
        x = x_next
        if done:
            trace.converged = True
            break

    trace.final_point = x
    logger.info("run_fbf %s: %s after %d iterations, final point %s", inst.name,
                "converged" if trace.converged else "not converged", trace.iterations, x.tolist())
    return trace


def square_summability(trace: IterationTrace, tail_fraction: float = 0.1) -> Dict[str, Any]:
    """Empirical square-summability of ||x_n - y_n|| and the weighted coupling sum."""
    gaps = np.array([r.gap for r in trace.records]) ** 2
    total = float(np.sum(gaps))
    tail_len = max(1, int(math.ceil(tail_fraction * len(gaps)))) if len(gaps) else 0
    tail = float(np.sum(gaps[len(gaps) - tail_len:])) if tail_len else 0.0
    share = tail / total if total > 0 else 0.0
    out = {"sum_gap_sq": total, "tail_sum_gap_sq": tail, "tail_share": share,
           "tail_within_1pct": share <= 0.01}
    if trace.reference is not None:
        out["sum_weighted_coupling"] = float(sum(r.lam * r.beta * r.coupling_ref for r in trace.records))
    return out


def log_slope(n: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of log|values| against log n."""
    if len(n) < 2:
        return 0.0
    vals = np.abs(values)
    if np.any(vals <= 0):
        return -math.inf if np.all(vals[-max(1, len(vals) // 10):] == 0) else 0.0
    return float(np.polyfit(np.log(n), np.log(vals), 1)[0])


def _trend(slope: float) -> str:
    if slope > SLOPE_EPS:
        return "increasing"
    if slope < -SLOPE_EPS:
        return "decreasing"
    return "constant"


@dataclass
class ConditionReport:
    horizon: int
    lipschitz: float
    max_product_L: float
    tail_max_product_L: float
    min_lambda: float
    tail_min_lambda: float
    lambda_slope: float
    beta_first: float
    beta_last: float
    beta_slope: float
    beta_trend: str
    product_slope: float
    product_partial_sum: float
    step_bound: bool  # 0 < limsup lam beta < 1/L
    lambda_bounded_below: bool  # liminf lam > 0
    beta_unbounded: bool  # beta -> infinity
    product_summable: bool  # sum lam beta < infinity
    flags: Dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def check_schedule(sched: Schedule, lipschitz: float, horizon: int) -> ConditionReport:
    """Numeric report on the convergence hypotheses over the first `horizon` terms.

    Limits are judged from the log-log slope over the last half of the horizon:
    a slope below -0.05 counts as decay to 0, above 0.05 as growth to infinity,
    and a product slope below -1 as summable.
    """
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    n = np.arange(1, horizon + 1, dtype=np.float64)
    lams, betas = sched.terms(lipschitz, horizon)
    prod = lams * betas
    half = slice(horizon // 2, horizon)
    nt = n[half]

    lam_slope = log_slope(nt, lams[half])
    beta_slope = log_slope(nt, betas[half])
    prod_slope = log_slope(nt, prod[half])
    tail_max = float(np.max(prod[half])) * lipschitz
    step_bound = prod_slope >= -SLOPE_EPS and (tail_max < 1.0 if lipschitz > 0 else True)
    lam_below = lam_slope >= -SLOPE_EPS
    beta_unb = beta_slope > SLOPE_EPS
    summable = prod_slope < -1.0 - SLOPE_EPS

    report = ConditionReport(
        horizon=horizon, lipschitz=lipschitz,
        max_product_L=float(np.max(prod)) * lipschitz, tail_max_product_L=tail_max,
        min_lambda=float(np.min(lams)), tail_min_lambda=float(np.min(lams[half])),
        lambda_slope=lam_slope, beta_first=float(betas[0]), beta_last=float(betas[-1]),
        beta_slope=beta_slope, beta_trend=_trend(beta_slope), product_slope=prod_slope,
        product_partial_sum=float(np.sum(prod)), step_bound=step_bound,
        lambda_bounded_below=lam_below, beta_unbounded=beta_unb, product_summable=summable,
    )
    report.flags = {
        "b_step_bound": step_bound,
        "c_lambda_liminf_positive": lam_below,
        "c_beta_to_infinity": beta_unb,
        "c_holds": lam_below and beta_unb,
        "b_and_c_hold": step_bound and lam_below and beta_unb,
        "product_summable": summable,
    }
    return report
