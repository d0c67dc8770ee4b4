from sqlalchemy import Integer, String, Boolean, DateTime, ForeignKey, Float, JSON
from sqlalchemy.orm import relationship, Mapped, mapped_column
from datetime import datetime, timezone
from .db import Base


def _now() -> datetime:
    return datetime.now(timezone.utc)


class Run(Base):
    __tablename__ = "runs"
    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    name: Mapped[str] = mapped_column(String, index=True)
    kind: Mapped[str] = mapped_column(String, index=True)  # solve, dynamics, check, oracle, properties
    config_digest: Mapped[str | None] = mapped_column(String(64), nullable=True)
    seed: Mapped[int] = mapped_column(Integer, default=0)
    converged: Mapped[bool | None] = mapped_column(Boolean, nullable=True)
    iterations: Mapped[int] = mapped_column(Integer, default=0)
    summary: Mapped[dict | None] = mapped_column(JSON, nullable=True)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=_now)

    iteration_rows = relationship("IterationRow", back_populates="run", cascade="all, delete-orphan",
                                  order_by="IterationRow.n")
    trajectory_rows = relationship("TrajectoryRow", back_populates="run", cascade="all, delete-orphan",
                                   order_by="TrajectoryRow.k")
    checks = relationship("CheckRow", back_populates="run", cascade="all, delete-orphan",
                          order_by="CheckRow.id")


class IterationRow(Base):
    """One discrete iteration n; nullable floats hold NaN (SQLite stores NaN as NULL)."""
    __tablename__ = "iterations"
    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id", ondelete="CASCADE"), index=True)
    n: Mapped[int] = mapped_column(Integer)
    x: Mapped[list] = mapped_column(JSON)
    y: Mapped[list] = mapped_column(JSON)
    lam: Mapped[float] = mapped_column(Float)
    beta: Mapped[float] = mapped_column(Float)
    res_fix: Mapped[float] = mapped_column(Float)
    res_gap: Mapped[float] = mapped_column(Float)
    dist_ref: Mapped[float | None] = mapped_column(Float, nullable=True)
    prop31_slack: Mapped[float | None] = mapped_column(Float, nullable=True)

    run = relationship("Run", back_populates="iteration_rows")


class TrajectoryRow(Base):
    __tablename__ = "trajectory"
    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id", ondelete="CASCADE"), index=True)
    k: Mapped[int] = mapped_column(Integer)
    t: Mapped[float] = mapped_column(Float)
    x: Mapped[list] = mapped_column(JSON)
    y: Mapped[list] = mapped_column(JSON)
    norm_h: Mapped[float] = mapped_column(Float)
    dist_ref: Mapped[float | None] = mapped_column(Float, nullable=True)

    run = relationship("Run", back_populates="trajectory_rows")


class CheckRow(Base):
    __tablename__ = "checks"
    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("runs.id", ondelete="CASCADE"), index=True)
    name: Mapped[str] = mapped_column(String)
    passed: Mapped[bool] = mapped_column(Boolean)
    witness: Mapped[float | None] = mapped_column(Float, nullable=True)

    run = relationship("Run", back_populates="checks")
