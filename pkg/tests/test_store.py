import json
import math

import numpy as np
import pandas as pd
import pytest

from app import crud, db
from app.errors import UsageError
from app.services_dynamics import ScheduleFn, integrate
from app.services_export import export_run, to_jsonable, write_frame, write_json
from app.services_fbf import Schedule, StoppingRule, run_fbf
from app.services_report import dynamics_summary, gather_report, solve_summary


@pytest.fixture
def selection_trace(selection_bep):
    return run_fbf(selection_bep, [1.0, 0.0], Schedule("constant", lam0=1.0),
                   StoppingRule(max_iter=10_000), reference=[0.3, 0.7])


def test_iterations_round_trip_through_the_store(memory_store, selection_trace):
    with db.get_db() as session:
        run = crud.create_run(session, "selection", "solve", "abc", seed=4)
        n = crud.record_iterations(session, run.id, selection_trace)
        crud.finish_run(session, run, {"ok": True}, selection_trace.converged, n)
        run_id = run.id
    with db.get_db() as session:
        frame = crud.iteration_frame(session, run_id)
        stored = crud.get_run(session, run_id)
        assert stored.converged is True
        assert stored.seed == 4
    pd.testing.assert_frame_equal(frame, selection_trace.to_frame(), check_dtype=False)
    assert db.get_stats()["iterations"] == selection_trace.iterations


def test_nan_columns_come_back_as_nan(memory_store, selection_bep):
    trace = run_fbf(selection_bep, [1.0, 0.0], Schedule("constant", lam0=1.0), StoppingRule(max_iter=3))
    with db.get_db() as session:
        run = crud.create_run(session, "no-ref", "solve")
        crud.record_iterations(session, run.id, trace)
        frame = crud.iteration_frame(session, run.id)
    assert frame["dist_ref"].isna().all()
    assert frame["prop31_slack"].isna().all()


def test_trajectory_round_trip(memory_store, selection_bep):
    trace = integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), step=0.5, t_end=2.0,
                      reference=[0.3, 0.7])
    with db.get_db() as session:
        run = crud.create_run(session, "flow", "dynamics")
        crud.record_trajectory(session, run.id, trace)
        frame = crud.trajectory_frame(session, run.id)
    pd.testing.assert_frame_equal(frame, trace.to_frame(), check_dtype=False)


def test_checks_and_runs_listing(memory_store):
    with db.get_db() as session:
        run = crud.create_run(session, "c", "check")
        crud.record_checks(session, run.id, {"a": True, "b": False}, {"a": 0.5, "b": float("nan")})
        rows = crud.check_rows(session, run.id)
        crud.create_run(session, "s", "solve")
    assert rows == [{"name": "a", "passed": True, "witness": 0.5},
                    {"name": "b", "passed": False, "witness": None}]
    with db.get_db() as session:
        assert [r.name for r in crud.list_runs(session, kind="check")] == ["c"]
        report = gather_report(session)
    assert report["n_runs"] == 2
    assert report["by_kind"] == [{"kind": "check", "count": 1}, {"kind": "solve", "count": 1}]


def test_get_run_unknown_id(memory_store):
    with db.get_db() as session:
        with pytest.raises(UsageError):
            crud.get_run(session, 999)


def test_failed_transaction_rolls_back(memory_store):
    with pytest.raises(RuntimeError):
        with db.get_db() as session:
            crud.create_run(session, "lost", "solve")
            raise RuntimeError("boom")
    assert db.get_stats()["runs"] == 0


def test_file_store(tmp_path, selection_trace):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    db.configure(url)
    try:
        db.init_db()
        with db.get_db() as session:
            run = crud.create_run(session, "persisted", "solve")
            crud.record_iterations(session, run.id, selection_trace)
        assert db.get_stats()["runs"] == 1
        db.reset_db()
        assert db.get_stats()["runs"] == 0
    finally:
        db.configure(None)


def test_export_writes_csv_and_summary(memory_store, tmp_path, selection_trace):
    with db.get_db() as session:
        run = crud.create_run(session, "selection", "solve")
        crud.record_iterations(session, run.id, selection_trace)
        crud.finish_run(session, run, to_jsonable(solve_summary(selection_trace)),
                        selection_trace.converged, selection_trace.iterations)
        written = export_run(session, run.id, str(tmp_path))
    assert [p.name for p in written] == ["trace.csv", "summary.json"]
    text = (tmp_path / "trace.csv").read_text(encoding="utf-8")
    lines = text.splitlines()
    assert lines[0] == "n,x0,x1,y0,y1,lambda,beta,res_fix,res_gap,dist_ref,prop31_slack"
    assert len(lines) == 1 + selection_trace.iterations
    assert "\r" not in text
    frame = pd.read_csv(tmp_path / "trace.csv", float_precision="round_trip")
    np.testing.assert_array_equal(frame["x0"].to_numpy(), [r.x[0] for r in selection_trace.records])
    summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert summary["converged"] is True
    assert summary["iterations"] == selection_trace.iterations


def test_export_json_format(memory_store, tmp_path, selection_bep):
    trace = integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), step=0.5, t_end=1.0)
    with db.get_db() as session:
        run = crud.create_run(session, "flow", "dynamics")
        crud.record_trajectory(session, run.id, trace)
        crud.finish_run(session, run, to_jsonable(dynamics_summary(trace)))
        export_run(session, run.id, str(tmp_path), fmt="json")
    rows = json.loads((tmp_path / "trajectory.json").read_text(encoding="utf-8"))
    assert len(rows) == 3
    assert rows[0]["dist_ref"] == "nan"


def test_write_frame_rejects_unknown_format(tmp_path):
    with pytest.raises(UsageError):
        write_frame(tmp_path / "x", pd.DataFrame({"a": [1]}), "xlsx")


def test_to_jsonable():
    data = {"a": np.float64(1.5), "b": np.array([1, 2]), "c": (np.bool_(True), math.inf), 3: None}
    assert to_jsonable(data) == {"a": 1.5, "b": [1, 2], "c": [True, "inf"], "3": None}


def test_write_json_is_sorted_and_newline_terminated(tmp_path):
    path = write_json(tmp_path / "sub" / "r.json", {"b": 1, "a": 2})
    assert path.read_text(encoding="utf-8") == '{\n  "a": 2,\n  "b": 1\n}\n'
    assert not list((tmp_path / "sub").glob(".*.tmp"))
