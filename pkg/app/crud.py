from sqlalchemy.orm import Session
from sqlalchemy import select, insert
from typing import Optional, List, Dict, Any
import math

import pandas as pd

from . import models
from .errors import UsageError
from .services_dynamics import TrajectoryTrace, trajectory_columns
from .services_fbf import IterationTrace, iteration_columns


def _nullable(v: float) -> Optional[float]:
    return None if v is None or math.isnan(v) else float(v)


def _nan(v: Optional[float]) -> float:
    return math.nan if v is None else float(v)


def create_run(db: Session, name: str, kind: str, config_digest: Optional[str] = None,
               seed: int = 0) -> models.Run:
    obj = models.Run(name=name, kind=kind, config_digest=config_digest, seed=seed)
    db.add(obj)
    db.flush()
    return obj


def finish_run(db: Session, run: models.Run, summary: Dict[str, Any],
               converged: Optional[bool] = None, iterations: int = 0) -> models.Run:
    run.summary = summary
    run.converged = converged
    run.iterations = iterations
    db.flush()
    return run


def get_run(db: Session, run_id: int) -> models.Run:
    run = db.get(models.Run, run_id)
    if run is None:
        raise UsageError(f"no run with id {run_id} in the store")
    return run


def list_runs(db: Session, kind: Optional[str] = None) -> List[models.Run]:
    q = select(models.Run).order_by(models.Run.id)
    if kind:
        q = q.where(models.Run.kind == kind)
    return list(db.execute(q).scalars().all())


def record_iterations(db: Session, run_id: int, trace: IterationTrace) -> int:
    rows = [{
        "run_id": run_id, "n": r.n, "x": r.x.tolist(), "y": r.y.tolist(),
        "lam": r.lam, "beta": r.beta, "res_fix": r.step, "res_gap": r.gap,
        "dist_ref": _nullable(r.dist_ref), "prop31_slack": _nullable(r.slack),
    } for r in trace.records]
    if rows:
        db.execute(insert(models.IterationRow), rows)
    return len(rows)


def record_trajectory(db: Session, run_id: int, trace: TrajectoryTrace) -> int:
    rows = [{
        "run_id": run_id, "k": k, "t": float(trace.times[k]),
        "x": trace.xs[k].tolist(), "y": trace.ys[k].tolist(),
        "norm_h": float(trace.norm_h[k]), "dist_ref": _nullable(float(trace.dist_ref[k])),
    } for k in range(trace.samples)]
    if rows:
        db.execute(insert(models.TrajectoryRow), rows)
    return len(rows)


def record_checks(db: Session, run_id: int, flags: Dict[str, bool],
                  witnesses: Optional[Dict[str, float]] = None) -> int:
    witnesses = witnesses or {}
    for name, passed in flags.items():
        w = witnesses.get(name)
        db.add(models.CheckRow(run_id=run_id, name=name, passed=bool(passed),
                               witness=None if w is None else _nullable(float(w))))
    db.flush()
    return len(flags)


def iteration_frame(db: Session, run_id: int) -> pd.DataFrame:
    """Stored iterations in the trace column order."""
    rows = db.execute(
        select(models.IterationRow).where(models.IterationRow.run_id == run_id).order_by(models.IterationRow.n)
    ).scalars().all()
    dim = len(rows[0].x) if rows else 0
    data = []
    for r in rows:
        row: Dict[str, Any] = {"n": r.n}
        row.update({f"x{i}": v for i, v in enumerate(r.x)})
        row.update({f"y{i}": v for i, v in enumerate(r.y)})
        row.update({"lambda": r.lam, "beta": r.beta, "res_fix": r.res_fix, "res_gap": r.res_gap,
                    "dist_ref": _nan(r.dist_ref), "prop31_slack": _nan(r.prop31_slack)})
        data.append(row)
    return pd.DataFrame(data, columns=iteration_columns(dim))


def trajectory_frame(db: Session, run_id: int) -> pd.DataFrame:
    rows = db.execute(
        select(models.TrajectoryRow).where(models.TrajectoryRow.run_id == run_id).order_by(models.TrajectoryRow.k)
    ).scalars().all()
    dim = len(rows[0].x) if rows else 0
    data = []
    for r in rows:
        row: Dict[str, Any] = {"t": r.t}
        row.update({f"x{i}": v for i, v in enumerate(r.x)})
        row.update({f"y{i}": v for i, v in enumerate(r.y)})
        row.update({"norm_h": r.norm_h, "dist_ref": _nan(r.dist_ref)})
        data.append(row)
    return pd.DataFrame(data, columns=trajectory_columns(dim))


def check_rows(db: Session, run_id: int) -> List[Dict[str, Any]]:
    rows = db.execute(
        select(models.CheckRow).where(models.CheckRow.run_id == run_id).order_by(models.CheckRow.id)
    ).scalars().all()
    return [{"name": c.name, "passed": c.passed, "witness": c.witness} for c in rows]
