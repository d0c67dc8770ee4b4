import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.bifunctions import zero_bifunction
from app.errors import UsageError
from app.geometry import BoxSet
from app.operators import zero_map
from app.services_dynamics import (SQRT6, ScheduleFn, TrajectoryTrace, check_schedule_fn,
                                   condition_43_partial_integral, h_map, integrate,
                                   lipschitz_h_check, lyapunov_violations,
                                   small_lambda_limit_check, ydot_bound_check, ydot_slack)
from app.services_fbf import BepInstance, Schedule, StoppingRule, fbf_step, run_fbf
from app.services_saddle import build_saddle_bep


@pytest.fixture
def saddle_g0(saddle):
    return build_saddle_bep(saddle, zero_bifunction(saddle.k))


def test_h_map_hand_example(saddle_g0):
    assert_allclose(h_map(saddle_g0, 0.5, 1.0, [0.5, 0.5]), [-0.75, 0.25], atol=1e-15)


def test_h_map_matches_fbf_displacement(saddle_bep):
    x = np.array([0.2, 0.3])
    _, x_next = fbf_step(saddle_bep, x, 0.3, 2.0)
    assert_allclose(h_map(saddle_bep, 0.3, 2.0, x), x_next - x, atol=1e-15)


def test_h_vanishes_at_fixed_points(saddle_bep, selection_bep):
    assert_array_equal(h_map(saddle_bep, 0.9, 1.0, [0.0, 1.0]), [0.0, 0.0])
    assert_allclose(h_map(selection_bep, 1.0, 1.0, [0.3, 0.7]), [0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("product", np.linspace(0.05, 0.95, 10))
def test_h_is_sqrt6_lipschitz(saddle_bep, product):
    ratio = lipschitz_h_check(saddle_bep, float(product), 1.0, 20_000, seed=4)
    assert ratio <= SQRT6 + 1e-9


def test_projection_residual_lipschitz_bound():
    k = BoxSet.unit(2)
    inst = BepInstance(zero_map(2), zero_bifunction(k), k)
    assert lipschitz_h_check(inst, 1.0, 1.0, 20_000, seed=0) <= 2.0 + 1e-12


def test_lipschitz_h_check_needs_step_bound(saddle_bep):
    with pytest.raises(UsageError):
        lipschitz_h_check(saddle_bep, 1.0, 1.0, 10, seed=0)


def test_schedule_fn_families():
    power = ScheduleFn("power", lam_bar=0.5, beta0=2.0, growth=0.5)
    assert power.beta(3.0) == pytest.approx(4.0)
    assert power.beta_dot(3.0) == pytest.approx(0.5)
    assert power.lam(3.0) == 0.5
    decay = ScheduleFn("exp_decay", delta=0.1, c=1.0)
    assert decay.lam(0.0) == pytest.approx(1.1)
    assert decay.lam_dot(0.0) == pytest.approx(-1.0)
    coupled = ScheduleFn("power", beta0=1.0, growth=1.0, coupled=True, rho=0.5, lipschitz=2.0)
    assert coupled.lam(1.0) * coupled.beta(1.0) * 2.0 == pytest.approx(0.5)
    # d/dt [rho / (L beta)] = -rho beta' / (L beta^2)
    assert coupled.lam_dot(1.0) == pytest.approx(-0.5 / (2.0 * 4.0))


def test_schedule_fn_from_discrete_is_piecewise_constant():
    sched = Schedule("offset_power", beta0=1.0, growth=0.5)
    fn = ScheduleFn.from_discrete(sched, 1.0)
    lams, betas = sched.terms(1.0, 3)
    assert fn.beta(0.0) == betas[0]
    assert fn.beta(0.99) == betas[0]
    assert fn.beta(2.0) == betas[2]
    assert fn.lam(1.5) == lams[1]
    assert fn.lam_dot(1.5) == 0.0


def test_schedule_fn_validation():
    with pytest.raises(UsageError):
        ScheduleFn("cosine")
    with pytest.raises(UsageError):
        ScheduleFn("discrete")
    with pytest.raises(UsageError):
        ScheduleFn("exp_decay", delta=0.0)


@pytest.mark.parametrize("inst_name, x0, max_iter", [
    ("saddle_bep", [0.5, 0.5], 100),
    ("selection_bep", [1.0, 0.0], 40),
])
def test_euler_step_one_reproduces_discrete_iteration(request, inst_name, x0, max_iter):
    inst = request.getfixturevalue(inst_name)
    sched = (Schedule("offset_power", beta0=1.0, growth=0.5) if inst_name == "saddle_bep"
             else Schedule("constant", lam0=1.0))
    discrete = run_fbf(inst, x0, sched, StoppingRule(tol_gap=0.0, tol_step=0.0, max_iter=max_iter))
    flow = integrate(inst, x0, ScheduleFn.from_discrete(sched, inst.lipschitz), method="euler",
                     step=1.0, t_end=max_iter - 1)
    assert flow.samples == max_iter
    assert discrete.iterations == max_iter
    xs = np.array([r.x for r in discrete.records])
    assert_allclose(flow.xs, xs, rtol=0, atol=1e-12)
    assert_allclose(flow.ys, np.array([r.y for r in discrete.records]), rtol=0, atol=1e-12)


def test_fixed_point_start_gives_constant_trajectory(saddle_bep):
    trace = integrate(saddle_bep, [0.0, 1.0], ScheduleFn("constant", coupled=True, lipschitz=1.0),
                      step=0.5, t_end=5.0)
    assert_array_equal(trace.xs, np.tile([0.0, 1.0], (trace.samples, 1)))
    assert np.all(trace.norm_h == 0.0)


def test_rk4_saddle_example_reaches_solution(saddle_bep):
    sched = ScheduleFn("constant", coupled=True, rho=0.9, lipschitz=1.0)
    trace = integrate(saddle_bep, [0.5, 0.5], sched, method="rk4", step=0.05, t_end=200.0,
                      reference=[0.0, 1.0])
    assert not trace.truncated
    assert trace.times[-1] == pytest.approx(200.0)
    assert trace.dist_ref[-1] <= 1e-2
    assert trace.dist_ref[-1] < trace.dist_ref[0]


def test_sample_times_and_frame(selection_bep):
    trace = integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), method="euler", step=0.25,
                      t_end=1.0)
    assert_allclose(trace.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.all(np.diff(trace.times) > 0)
    frame = trace.to_frame()
    assert list(frame.columns) == ["t", "x0", "x1", "y0", "y1", "norm_h", "dist_ref"]
    assert len(frame) == trace.samples
    assert frame["dist_ref"].isna().all()


def test_integrate_rejects_bad_arguments(selection_bep):
    with pytest.raises(UsageError):
        integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), method="midpoint")
    with pytest.raises(UsageError):
        integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), step=0.0)
    with pytest.raises(UsageError):
        integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), t_end=-1.0)


def test_selection_flow_is_fejer_monotone(selection_bep):
    trace = integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), method="rk4", step=0.1,
                      t_end=20.0, reference=[0.3, 0.7])
    assert lyapunov_violations(trace) == []
    assert trace.dist_ref[-1] < 1e-3


def test_lyapunov_violations_reports_rises():
    trace = TrajectoryTrace(times=np.array([0.0, 1.0, 2.0]), xs=np.zeros((3, 1)), ys=np.zeros((3, 1)),
                            norm_h=np.zeros(3), gap=np.zeros(3), dist_ref=np.array([1.0, 0.5, 0.7]),
                            reference=np.zeros(1))
    assert lyapunov_violations(trace) == [1.0]


def test_ydot_bound_with_constant_schedule(saddle_bep):
    sched = ScheduleFn("constant", coupled=True, rho=0.9, lipschitz=1.0)
    trace = integrate(saddle_bep, [0.5, 0.5], sched, method="rk4", step=0.001, t_end=2.0)
    for t in (0.5, 1.0, 1.5):
        lhs, rhs = ydot_bound_check(saddle_bep, sched, trace, t)
        assert lhs <= rhs + ydot_slack(trace, t)


def test_ydot_bound_with_exp_decay_schedule(selection_bep):
    sched = ScheduleFn("exp_decay", delta=0.1, c=1.0)
    trace = integrate(selection_bep, [1.0, 0.0], sched, method="rk4", step=0.001, t_end=1.0)
    lhs, rhs = ydot_bound_check(selection_bep, sched, trace, 0.5)
    assert math.isfinite(rhs)
    assert lhs <= rhs + ydot_slack(trace, 0.5)


def test_ydot_bound_at_fixed_point(saddle_bep):
    sched = ScheduleFn("constant", coupled=True, lipschitz=1.0)
    trace = integrate(saddle_bep, [0.0, 1.0], sched, step=0.1, t_end=1.0)
    assert ydot_bound_check(saddle_bep, sched, trace, 0.5) == (0.0, 0.0)


def test_ydot_bound_rejects_boundary_times(selection_bep):
    trace = integrate(selection_bep, [1.0, 0.0], ScheduleFn("constant"), step=0.5, t_end=1.0)
    with pytest.raises(UsageError, match="boundary"):
        ydot_bound_check(selection_bep, ScheduleFn("constant"), trace, 0.0)
    with pytest.raises(UsageError, match="not a sample time"):
        ydot_bound_check(selection_bep, ScheduleFn("constant"), trace, 0.3)


@pytest.mark.parametrize("x", [[0.5, 0.5], [0.0, 0.0], [1.0, 0.25]])
def test_small_lambda_limit(saddle_g0, x):
    norms = small_lambda_limit_check(saddle_g0, 1.0, x, [10.0 ** -k for k in range(1, 7)])
    assert all(b <= a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-3


def test_small_lambda_limit_needs_decreasing_sequence(saddle_g0):
    with pytest.raises(UsageError):
        small_lambda_limit_check(saddle_g0, 1.0, [0.5, 0.5], [0.1, 0.2])


def test_check_schedule_fn_flags():
    power = check_schedule_fn(ScheduleFn("power", beta0=1.0, growth=0.5, coupled=True, lipschitz=1.0),
                              1.0, 1000.0)
    assert power["flags"]["b_step_bound"]
    assert power["flags"]["c_beta_to_infinity"]
    assert not power["flags"]["c_lambda_inf_positive"]
    const = check_schedule_fn(ScheduleFn("constant", lam_bar=0.5), 1.0, 100.0)
    assert const["flags"]["c_lambda_inf_positive"]
    assert not const["flags"]["c_beta_to_infinity"]
    assert const["beta_dot_sq_integral"] == 0.0


def test_condition_43_vanishes_at_solution(saddle_bep):
    sched = ScheduleFn("constant", coupled=True, lipschitz=1.0)
    assert condition_43_partial_integral(saddle_bep, sched, [0.0, 1.0], 10.0) == pytest.approx(0.0, abs=1e-12)
