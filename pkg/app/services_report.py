"""
Run summaries and hypothesis reports, plus a store-wide digest of past runs.
"""
import math
from typing import Any, Dict, Optional

import numpy as np
from sqlalchemy.orm import Session
from sqlalchemy import select, func

from . import models
from .services_dynamics import ScheduleFn, TrajectoryTrace, check_schedule_fn, condition_43_partial_integral, lyapunov_violations
from .services_fbf import (BepInstance, IterationTrace, Schedule, check_schedule, fitzpatrick_zero_term,
                           square_summability)
from .services_saddle import (SaddleProblem, condition_57_partial_sum, condition_57_terms, example_problem,
                              series_trend)


def solve_summary(trace: IterationTrace) -> Dict[str, Any]:
    last = trace.records[-1]
    slacks = [r.slack for r in trace.records if not math.isnan(r.slack)]
    out = {
        "converged": trace.converged,
        "iterations": trace.iterations,
        "final_point": trace.final_point.tolist(),
        "res_fix": last.step,
        "res_gap": last.gap,
        "reference": None if trace.reference is None else trace.reference.tolist(),
        "dist_ref": None if trace.reference is None else float(np.linalg.norm(trace.final_point - trace.reference)),
        "min_prop31_slack": min(slacks) if slacks else None,
        "prop31_violations": trace.slack_violations,
        "first_prop31_violation": trace.first_violation,
    }
    out["square_summability"] = square_summability(trace)
    return out


def dynamics_summary(trace: TrajectoryTrace) -> Dict[str, Any]:
    out = {
        "method": trace.method,
        "step": trace.step,
        "samples": trace.samples,
        "t_final": float(trace.times[-1]) if trace.samples else 0.0,
        "final_point": trace.final_point.tolist() if trace.samples else None,
        "final_norm_h": float(trace.norm_h[-1]) if trace.samples else None,
        "truncated": trace.truncated,
        "message": trace.message,
        "reference": None if trace.reference is None else trace.reference.tolist(),
    }
    if trace.reference is not None and trace.samples:
        out["dist_ref"] = float(trace.dist_ref[-1])
        out["lyapunov_violations"] = len(lyapunov_violations(trace))
    return out


def _is_example(sp: Optional[SaddleProblem]) -> bool:
    if sp is None:
        return False
    ex = example_problem()
    return (sp.m.shape == ex.m.shape and np.array_equal(sp.m, ex.m) and np.array_equal(sp.a, ex.a)
            and np.array_equal(sp.b, ex.b) and np.array_equal(sp.k.lower, ex.k.lower)
            and np.array_equal(sp.k.upper, ex.k.upper))


def check_report(inst: BepInstance, sched: Schedule, sched_fn: ScheduleFn, horizon: int, t_end: float,
                 reference: Optional[np.ndarray] = None, saddle: Optional[SaddleProblem] = None,
                 p: float = 0.0, q: float = 0.0, relative: bool = False) -> Dict[str, Any]:
    """Hypothesis flags with numeric witnesses for a discrete and a continuous schedule."""
    L = inst.lipschitz
    discrete = check_schedule(sched, L, horizon)
    report: Dict[str, Any] = {
        "lipschitz": L,
        "discrete": discrete.to_dict(),
        "continuous": check_schedule_fn(sched_fn, L, t_end),
    }
    flags = {f"discrete.{k}": v for k, v in discrete.flags.items()}
    flags.update({f"continuous.{k}": v for k, v in report["continuous"]["flags"].items()})
    witnesses: Dict[str, float] = {
        "discrete.b_step_bound": discrete.tail_max_product_L,
        "discrete.c_lambda_liminf_positive": discrete.tail_min_lambda,
        "discrete.c_beta_to_infinity": discrete.beta_slope,
        "discrete.product_summable": discrete.product_partial_sum,
    }

    if reference is not None:
        term = fitzpatrick_zero_term(inst, reference)
        lams, betas = sched.terms(L, horizon)
        report["condition_31"] = {
            "p": 0.0,
            "fitzpatrick_term": term,
            "partial_sum": float(np.sum(lams * betas)) * term,
        }
        report["condition_43"] = {
            "p": 0.0,
            "partial_integral": condition_43_partial_integral(inst, sched_fn, reference, t_end),
        }
        flags["condition_31_zero_term"] = term <= 1e-12
        witnesses["condition_31_zero_term"] = term

    if _is_example(saddle):
        terms = condition_57_terms(sched, p, q, horizon, relative, L)
        trend = series_trend(terms)
        report["condition_57"] = {
            "p": p, "q": q, "relative": relative,
            "partial_sum": condition_57_partial_sum(sched, p, q, horizon, relative, L),
            "trend": trend,
        }
        flags["condition_57"] = trend != "diverging"
        witnesses["condition_57"] = report["condition_57"]["partial_sum"]

    report["flags"] = flags
    report["witnesses"] = witnesses
    return report


def gather_report(db: Session) -> dict:
    """Counts and one line per stored run."""
    n_runs = db.execute(select(func.count(models.Run.id))).scalar() or 0
    kind_rows = db.execute(
        select(models.Run.kind, func.count(models.Run.id)).group_by(models.Run.kind).order_by(models.Run.kind)
    ).all()
    runs = db.execute(select(models.Run).order_by(models.Run.id)).scalars().all()
    return {
        "n_runs": n_runs,
        "by_kind": [{"kind": k, "count": c} for k, c in kind_rows],
        "runs": [{
            "id": r.id, "name": r.name, "kind": r.kind, "seed": r.seed,
            "converged": r.converged, "iterations": r.iterations,
            "config_digest": r.config_digest,
        } for r in runs],
    }
