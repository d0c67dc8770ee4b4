"""
Continuous forward-backward-forward dynamics

    x'(t) = h(lam(t), beta(t), x(t)),
    h(lam, beta, x) = y - x + lam beta (Bx - By),  y = J_lam^g(x - lam beta Bx),

with fixed-step explicit integrators and numeric checks of the sqrt(6)
Lipschitz bound on h and of the bound on ||y'(t)||.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from .errors import ConvergenceError, NumericalError, UsageError
from .geometry import BoxSet, Point, as_point, check_finite, norm, sample_pairs, sampling_region
from .services_fbf import BepInstance, Schedule, fitzpatrick_zero_term

logger = logging.getLogger(__name__)

SQRT6 = math.sqrt(6.0)
SCHEDULE_FN_FAMILIES = ("constant", "power", "exp_decay", "discrete")
METHODS = ("euler", "rk4")
DEFAULT_STEP = 0.1

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class ScheduleFn:
    """Parameter functions lam(t), beta(t) with closed-form derivatives.

        constant   lam = lam_bar,                 beta = beta0
        power      lam = lam_bar,                 beta = beta0 (1 + t)**growth
        exp_decay  lam = delta + c exp(-t),       beta = beta0 (1 + t)**growth
        discrete   lam_{floor(t)+1}, beta_{floor(t)+1} of a discrete Schedule
    Coupled mode replaces lam by rho / (L beta) (when L > 0).
    """

    family: str = "constant"
    lam_bar: float = 1.0
    beta0: float = 1.0
    growth: float = 0.0
    delta: float = 0.1
    c: float = 1.0
    coupled: bool = False
    rho: float = 0.9
    lipschitz: float = 0.0
    discrete: Optional[Schedule] = None

    def __post_init__(self):
        if self.family not in SCHEDULE_FN_FAMILIES:
            raise UsageError(f"unknown schedule family {self.family!r}; expected one of {SCHEDULE_FN_FAMILIES}")
        if self.family == "discrete":
            if self.discrete is None:
                raise UsageError("discrete schedule function needs a Schedule")
            return
        if not self.lam_bar > 0 or not self.beta0 > 0:
            raise UsageError("lam_bar and beta0 must be > 0")
        if self.growth < 0:
            raise UsageError(f"growth exponent must be >= 0, got {self.growth}")
        if self.family == "exp_decay" and (not self.delta > 0 or self.c < 0):
            raise UsageError("exp_decay needs delta > 0 and c >= 0")
        if self.coupled and not 0 < self.rho < 1:
            raise UsageError(f"coupled schedule needs 0 < rho < 1, got {self.rho}")

    @classmethod
    def from_discrete(cls, sched: Schedule, lipschitz: float) -> "ScheduleFn":
        """Piecewise-constant extension: on [k, k+1) use the terms of iteration k+1."""
        return cls(family="discrete", discrete=sched, lipschitz=lipschitz)

    @property
    def is_coupled(self) -> bool:
        return self.coupled and self.lipschitz > 0

    def beta(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.family == "discrete":
            return self.discrete.betas(np.floor(t) + 1.0)
        if self.family == "constant":
            return np.full_like(t, self.beta0)
        return self.beta0 * (1.0 + t) ** self.growth

    def beta_dot(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.family in ("discrete", "constant") or self.growth == 0:
            return np.zeros_like(t)
        return self.beta0 * self.growth * (1.0 + t) ** (self.growth - 1.0)

    def lam(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.family == "discrete":
            return self.discrete.lams(np.floor(t) + 1.0, self.lipschitz)
        if self.is_coupled:
            return self.rho / (self.lipschitz * self.beta(t))
        if self.family == "exp_decay":
            return self.delta + self.c * np.exp(-t)
        return np.full_like(t, self.lam_bar)

    def lam_dot(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.family == "discrete":
            return np.zeros_like(t)
        if self.is_coupled:
            return -self.rho * self.beta_dot(t) / (self.lipschitz * self.beta(t) ** 2)
        if self.family == "exp_decay":
            return -self.c * np.exp(-t)
        return np.zeros_like(t)


def _field(inst: BepInstance, lam: float, beta: float, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(h(lam, beta, x), y) for a point or a stack of points."""
    if not lam > 0 or not beta > 0:
        raise UsageError(f"lambda and beta must be > 0, got {lam}, {beta}")
    s = lam * beta
    bx = inst.lower(x)
    y = inst.upper.resolvent(lam, x - s * bx)
    return y - x + s * (bx - inst.lower(y)), y


def h_map(inst: BepInstance, lam: float, beta: float, x: ArrayLike) -> Point:
    """Displacement x_next - x of one forward-backward-forward step."""
    x = np.asarray(x, dtype=np.float64)
    h, _ = _field(inst, lam, beta, x)
    return check_finite(h, "h")


def lipschitz_h_check(inst: BepInstance, lam: float, beta: float, samples: int, seed: int,
                      region: Optional[BoxSet] = None) -> float:
    """Largest sampled ||h(x) - h(x')|| / ||x - x'||; at most sqrt(6) when lam*beta*L < 1."""
    if not lam > 0 or not beta > 0 or lam * beta * inst.lipschitz >= 1.0:
        raise UsageError(f"need lam*beta in (0, 1/L), got lam*beta*L = {lam * beta * inst.lipschitz:.6g}")
    xs, ys = sample_pairs(region or sampling_region(inst.k), samples, seed)
    dh = h_map(inst, lam, beta, xs) - h_map(inst, lam, beta, ys)
    ratios = np.linalg.norm(dh, axis=1) / np.linalg.norm(xs - ys, axis=1)
    worst = float(np.max(ratios))
    if worst > SQRT6 + 1e-9:
        logger.warning("sampled Lipschitz ratio of h %.12g exceeds sqrt(6)", worst)
    return worst


@dataclass
class TrajectoryTrace:
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    norm_h: np.ndarray  # ||x'(t)||
    gap: np.ndarray  # ||x(t) - y(t)||
    dist_ref: np.ndarray
    method: str = "rk4"
    step: float = DEFAULT_STEP
    truncated: bool = False
    message: str = ""
    reference: Optional[Point] = None

    @property
    def samples(self) -> int:
        return int(self.times.shape[0])

    @property
    def dim(self) -> int:
        return int(self.xs.shape[1]) if self.xs.ndim == 2 else 0

    @property
    def final_point(self) -> Point:
        return self.xs[-1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(trajectory_rows(self), columns=trajectory_columns(self.dim))


def trajectory_columns(dim: int) -> List[str]:
    return ["t"] + [f"x{i}" for i in range(dim)] + [f"y{i}" for i in range(dim)] + ["norm_h", "dist_ref"]


def trajectory_rows(trace: TrajectoryTrace) -> List[Dict[str, Any]]:
    rows = []
    for k in range(trace.samples):
        row: Dict[str, Any] = {"t": float(trace.times[k])}
        row.update({f"x{i}": float(v) for i, v in enumerate(trace.xs[k])})
        row.update({f"y{i}": float(v) for i, v in enumerate(trace.ys[k])})
        row["norm_h"] = float(trace.norm_h[k])
        row["dist_ref"] = float(trace.dist_ref[k])
        rows.append(row)
    return rows


def _rhs(inst: BepInstance, sched: ScheduleFn, t: float, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return _field(inst, float(sched.lam(t)), float(sched.beta(t)), x)


def integrate(inst: BepInstance, x0: ArrayLike, sched: ScheduleFn, method: str = "rk4",
              step: float = DEFAULT_STEP, t_end: float = 10.0,
              reference: Optional[ArrayLike] = None) -> TrajectoryTrace:
    """Fixed-step explicit integration sampled at t_k = k*step, k = 0..ceil(t_end/step).

    Euler with step 1 and ScheduleFn.from_discrete reproduces run_fbf. A resolvent
    or numeric failure stops the integration and returns the samples computed so
    far with truncated=True.
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")
    if not step > 0 or not t_end > 0:
        raise UsageError(f"step and t_end must be > 0, got step={step}, t_end={t_end}")
    x = as_point(x0, dim=inst.dim, what="x0")
    u = None if reference is None else as_point(reference, dim=inst.dim, what="reference point")
    n_steps = int(math.ceil(t_end / step - 1e-9))
    logger.debug("integrate %s: method=%s step=%g steps=%d", inst.name, method, step, n_steps)

    times, xs, ys, hs = [], [], [], []
    truncated, message = False, ""
    for k in range(n_steps + 1):
        t = k * step
        try:
            h, y = _rhs(inst, sched, t, x)
            check_finite(h, "h")
        except (ConvergenceError, NumericalError) as exc:
            truncated, message = True, f"stopped at t={t:g}: {exc}"
            logger.warning("integrate %s: %s", inst.name, message)
            break
        times.append(t)
        xs.append(x)
        ys.append(y)
        hs.append(norm(h))
        if k == n_steps:
            break
        try:
            x = _advance(inst, sched, method, t, x, h, step)
        except (ConvergenceError, NumericalError) as exc:
            truncated, message = True, f"stopped after t={t:g}: {exc}"
            logger.warning("integrate %s: %s", inst.name, message)
            break

    xs_arr = np.array(xs)
    ys_arr = np.array(ys)
    dist = (np.linalg.norm(xs_arr - u, axis=1) if u is not None and len(xs)
            else np.full(len(xs), math.nan))
    trace = TrajectoryTrace(
        times=np.array(times), xs=xs_arr, ys=ys_arr, norm_h=np.array(hs),
        gap=np.linalg.norm(xs_arr - ys_arr, axis=1) if len(xs) else np.zeros(0),
        dist_ref=dist, method=method, step=float(step), truncated=truncated,
        message=message, reference=u,
    )
    logger.info("integrate %s: %d samples up to t=%g%s", inst.name, trace.samples,
                times[-1] if times else 0.0, " (truncated)" if truncated else "")
    return trace


def _advance(inst: BepInstance, sched: ScheduleFn, method: str, t: float, x: np.ndarray,
             k1: np.ndarray, dt: float) -> np.ndarray:
    if method == "euler":
        return check_finite(x + dt * k1, "x")
    k2, _ = _rhs(inst, sched, t + 0.5 * dt, x + 0.5 * dt * k1)
    k3, _ = _rhs(inst, sched, t + 0.5 * dt, x + 0.5 * dt * k2)
    k4, _ = _rhs(inst, sched, t + dt, x + dt * k3)
    return check_finite(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), "x")


def _interior_index(trace: TrajectoryTrace, t: float) -> int:
    hits = np.flatnonzero(np.abs(trace.times - t) <= 1e-9 * max(1.0, abs(t)))
    if hits.size == 0:
        raise UsageError(f"t={t} is not a sample time of the trajectory")
    i = int(hits[0])
    if i == 0 or i == trace.samples - 1:
        raise UsageError(f"t={t} is a boundary sample; central differences need an interior time")
    return i


def ydot_bound_check(inst: BepInstance, sched: ScheduleFn, trace: TrajectoryTrace,
                     t: float) -> Tuple[float, float]:
    """(central-difference ||y'(t)||, analytic bound on ||y'(t)||) at an interior sample."""
    i = _interior_index(trace, t)
    dt = trace.times[i + 1] - trace.times[i - 1]
    lhs = norm(trace.ys[i + 1] - trace.ys[i - 1]) / dt

    lam, beta = float(sched.lam(t)), float(sched.beta(t))
    lam_dot, beta_dot = float(sched.lam_dot(t)), float(sched.beta_dot(t))
    L = inst.lipschitz
    x, y = trace.xs[i], trace.ys[i]
    s = lam * beta * L
    coeff = 1.0 + abs(lam_dot) / lam + s + s * math.sqrt(1.0 + s * s)
    rhs = coeff * norm(y - x) + L * abs(beta_dot) * lam * norm(inst.lower(x))
    return lhs, rhs


def ydot_slack(trace: TrajectoryTrace, t: float) -> float:
    """Discretization allowance 10 * step * ||y''(t)|| (second-difference estimate)."""
    i = _interior_index(trace, t)
    dt = trace.times[i + 1] - trace.times[i]
    ydd = (trace.ys[i + 1] - 2.0 * trace.ys[i] + trace.ys[i - 1]) / (dt * dt)
    return 10.0 * dt * norm(ydd) + 1e-12


def small_lambda_limit_check(inst: BepInstance, beta: float, x: ArrayLike,
                             lam_seq: List[float]) -> List[float]:
    """||h(lam, beta, x)|| along a decreasing sequence of lam."""
    lams = np.asarray(lam_seq, dtype=np.float64)
    if lams.size == 0 or np.any(lams <= 0) or np.any(np.diff(lams) >= 0):
        raise UsageError("lam_seq must be positive and strictly decreasing")
    x = as_point(x, dim=inst.dim)
    return [norm(h_map(inst, float(lam), beta, x)) for lam in lams]


def check_schedule_fn(sched: ScheduleFn, lipschitz: float, t_end: float,
                      samples: int = 1001) -> Dict[str, Any]:
    """Numeric report on the continuous-time hypotheses over [0, t_end].

    Tail quantities use [t_end/2, t_end]; beta growth is the log-log slope of beta
    against 1 + t on the tail.
    """
    if not t_end > 0 or samples < 2:
        raise UsageError("need t_end > 0 and samples >= 2")
    t = np.linspace(0.0, t_end, samples)
    lam, beta = sched.lam(t), sched.beta(t)
    lam_dot, beta_dot = sched.lam_dot(t), sched.beta_dot(t)
    tail = t >= 0.5 * t_end
    prod_l = lam * beta * lipschitz
    tail_t = t[tail]
    if tail_t.size >= 2 and tail_t[-1] > tail_t[0]:
        beta_slope = float(np.polyfit(np.log1p(tail_t), np.log(beta[tail]), 1)[0])
        lam_slope = float(np.polyfit(np.log1p(tail_t), np.log(lam[tail]), 1)[0])
    else:
        beta_slope = lam_slope = 0.0
    beta_dot_sq = float(_trapezoid(beta_dot ** 2, t))
    report = {
        "t_end": float(t_end),
        "lipschitz": float(lipschitz),
        "max_product_L": float(np.max(prod_l)),
        "tail_max_product_L": float(np.max(prod_l[tail])),
        "inf_lambda": float(np.min(lam)),
        "tail_inf_lambda": float(np.min(lam[tail])),
        "sup_abs_lambda_dot": float(np.max(np.abs(lam_dot))),
        "beta_dot_sq_integral": beta_dot_sq,
        "beta_slope": beta_slope,
        "lambda_slope": lam_slope,
    }
    report["flags"] = {
        "b_step_bound": report["tail_max_product_L"] < 1.0,
        "c_lambda_inf_positive": report["tail_inf_lambda"] > 0 and lam_slope >= -0.05,
        "c_beta_to_infinity": beta_slope > 0.05,
        "d_lambda_dot_bounded": bool(np.all(np.isfinite(lam_dot))),
        "d_beta_dot_square_integrable_so_far": math.isfinite(beta_dot_sq),
    }
    return report


def condition_43_partial_integral(inst: BepInstance, sched: ScheduleFn, u: ArrayLike,
                                  t_end: float, step: float = DEFAULT_STEP) -> float:
    """Trapezoid value of int_0^t_end lam beta [F_B(u, 0) - sigma_{S_f}(0)] dt."""
    if not step > 0 or not t_end > 0:
        raise UsageError("step and t_end must be > 0")
    t = np.linspace(0.0, t_end, int(math.ceil(t_end / step - 1e-9)) + 1)
    term = fitzpatrick_zero_term(inst, u)
    return float(_trapezoid(sched.lam(t) * sched.beta(t), t)) * term


def lyapunov_violations(trace: TrajectoryTrace, slack: float = 1e-6) -> List[float]:
    """Sample times where ||x(t) - u|| grows faster than slack per unit time."""
    if trace.reference is None:
        raise UsageError("trajectory has no reference point")
    if trace.samples < 2:
        return []
    rise = np.diff(trace.dist_ref) - slack * np.diff(trace.times)
    return [float(trace.times[k]) for k in np.flatnonzero(rise > 0)]

