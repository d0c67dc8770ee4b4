"""
SQLite run store.
In-memory by default; `configure(url)` points it at a file (e.g. sqlite:///runs.db).
"""

from contextlib import contextmanager
from sqlalchemy import create_engine, select, func
from sqlalchemy.orm import sessionmaker, declarative_base
from sqlalchemy.pool import StaticPool

Base = declarative_base()

MEMORY_URL = "sqlite://"

_engines: dict = {}
_factories: dict = {}
_current = {"url": MEMORY_URL}


def configure(url: str | None = None) -> str:
    """Select the store URL used by get_db(); None means in-memory."""
    _current["url"] = url or MEMORY_URL
    return _current["url"]


def _get_engine():
    """Get or create the engine for the current URL."""
    url = _current["url"]
    if url not in _engines:
        kwargs = {"connect_args": {"check_same_thread": False}, "future": True}
        if url == MEMORY_URL:
            kwargs["poolclass"] = StaticPool
        engine = create_engine(url, **kwargs)
        from . import models  # noqa: F401
        Base.metadata.create_all(bind=engine)
        _engines[url] = engine
    return _engines[url]


def _get_session_factory():
    url = _current["url"]
    if url not in _factories:
        _factories[url] = sessionmaker(
            bind=_get_engine(), autoflush=False, autocommit=False, future=True
        )
    return _factories[url]


@contextmanager
def get_db():
    """Transactional session: commit on success, roll back on error."""
    factory = _get_session_factory()
    db = factory()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()


def init_db():
    """Ensure the schema exists for the current URL."""
    _get_engine()


def reset_db():
    """Drop all data and recreate tables for the current URL."""
    url = _current["url"]
    if url in _engines:
        if url != MEMORY_URL:
            Base.metadata.drop_all(bind=_engines[url])
        _engines[url].dispose()
        del _engines[url]
    _factories.pop(url, None)
    _get_engine()


def get_stats() -> dict:
    """Record counts for all tables."""
    from . import models

    with get_db() as db:
        return {
            "runs": db.execute(select(func.count(models.Run.id))).scalar() or 0,
            "iterations": db.execute(select(func.count(models.IterationRow.id))).scalar() or 0,
            "trajectory_samples": db.execute(select(func.count(models.TrajectoryRow.id))).scalar() or 0,
            "checks": db.execute(select(func.count(models.CheckRow.id))).scalar() or 0,
        }
