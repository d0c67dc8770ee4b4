"""Export stored runs as CSV/JSON files."""

import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, List

import numpy as np
import pandas as pd
from sqlalchemy.orm import Session

from . import crud
from .errors import UsageError

FORMATS = ("csv", "json")
TRACE_FILES = {"solve": "trace", "dynamics": "trajectory"}


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars/arrays and tuples to plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    return value


def _atomic_write(path: Path, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path: Path, data: Any) -> Path:
    return _atomic_write(Path(path), json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, frame: pd.DataFrame) -> Path:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n")
    return _atomic_write(Path(path), buf.getvalue())


def write_frame(path_stem: Path, frame: pd.DataFrame, fmt: str) -> Path:
    if fmt not in FORMATS:
        raise UsageError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if fmt == "csv":
        return _write_csv(Path(f"{path_stem}.csv"), frame)
    records = [{k: to_jsonable(v) for k, v in row.items()} for row in frame.to_dict(orient="records")]
    return write_json(Path(f"{path_stem}.json"), records)


def export_run(db: Session, run_id: int, out_dir: str, fmt: str = "csv") -> List[Path]:
    """Write the stored run: its trace (solve/dynamics) and summary.json / report.json."""
    run = crud.get_run(db, run_id)
    out = Path(out_dir)
    written = []
    if run.kind == "solve":
        written.append(write_frame(out / TRACE_FILES["solve"], crud.iteration_frame(db, run_id), fmt))
    elif run.kind == "dynamics":
        written.append(write_frame(out / TRACE_FILES["dynamics"], crud.trajectory_frame(db, run_id), fmt))
    summary_name = "summary.json" if run.kind in TRACE_FILES else "report.json"
    written.append(write_json(out / summary_name, run.summary or {}))
    return written
