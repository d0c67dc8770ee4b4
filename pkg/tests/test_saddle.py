import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.bifunctions import zero_bifunction
from app.errors import UsageError
from app.geometry import BoxSet, sample_pairs
from app.operators import lipschitz_estimate, lower_bifunction
from app.services_fbf import Schedule
from app.services_oracle import solve_ep_grid
from app.services_saddle import (SaddleProblem, build_saddle_bep, condition_57_partial_sum,
                                 condition_57_terms, example_condition_term, example_conjugates,
                                 example_problem, example_support, fitzpatrick_grid, lower_operator,
                                 random_saddle_problem, saddle_points_grid, series_trend)


def _problem(m, a, b):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return SaddleProblem(m, np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                         BoxSet.unit(m.shape[0]), BoxSet.unit(m.shape[1]))


def test_example_operator(saddle):
    inst = build_saddle_bep(saddle, zero_bifunction(saddle.k))
    assert inst.lipschitz == pytest.approx(1.0)
    assert_allclose(inst.lower([0.3, 0.6]), [1.6, -1.3], rtol=0, atol=1e-15)


def test_zero_coupling_gives_zero_operator():
    sp = _problem([[0.0]], [0.0], [0.0])
    b = lower_operator(sp)
    assert b.is_zero
    assert b.lipschitz == 0.0


def test_dimension_mismatch():
    with pytest.raises(UsageError):
        SaddleProblem(np.ones((2, 1)), np.ones(2), np.ones(1), BoxSet.unit(1), BoxSet.unit(1))
    sp = _problem([[1.0]], [1.0], [1.0])
    with pytest.raises(UsageError):
        build_saddle_bep(sp, zero_bifunction(BoxSet.unit(3)))


def test_gamma_and_coupling(saddle):
    assert saddle.gamma(np.array([2.0]), np.array([3.0])) == pytest.approx(11.0)
    # f((u1, v1), (u2, v2)) = Gamma(u2, v1) - Gamma(u1, v2)
    x1, x2 = np.array([0.2, 0.4]), np.array([0.9, 0.1])
    expected = saddle.gamma(x2[:1], x1[1:]) - saddle.gamma(x1[:1], x2[1:])
    assert saddle.coupling(x1, x2) == pytest.approx(float(expected))


@pytest.mark.parametrize("dims", [(1, 1), (2, 3), (3, 2)])
def test_coupling_matches_operator_form(dims):
    rng = np.random.default_rng(sum(dims))
    sp = random_saddle_problem(rng, *dims)
    xs, ys = sample_pairs(sp.k, 10_000, seed=1)
    assert_allclose(sp.coupling(xs, ys), lower_bifunction(lower_operator(sp))(xs, ys), rtol=0, atol=1e-12)


def test_lipschitz_certificate_is_not_exceeded():
    rng = np.random.default_rng(3)
    for _ in range(5):
        sp = random_saddle_problem(rng, 2, 2)
        b = lower_operator(sp)
        assert lipschitz_estimate(b, 2000, seed=0) <= np.linalg.norm(sp.m, 2) + 1e-9


@pytest.mark.parametrize("p, q, beta, expected", [
    (20.0, 0.0, 10.0, (1.0, 1.0, 0.0)),
    (0.0, 0.0, 1.0, (-1.0, 1.0, 0.0)),
    (0.0, -1.0, 1.0, (-1.0, 0.0, -2.0)),
])
def test_example_conjugates(p, q, beta, expected):
    assert_allclose(example_conjugates(p, q, beta), expected)


def test_example_condition_cases():
    beta = 10.0
    # Case I: the bracket is 2p/beta - 2
    assert example_condition_term(2 * beta, 0.0, beta) == pytest.approx(2.0)
    # Case II sums to exactly zero
    assert example_condition_term(0.0, 0.0, beta) == 0.0
    assert example_condition_term(0.0, -beta, beta) == pytest.approx(1.0)
    with pytest.raises(UsageError):
        example_conjugates(1.0, 1.0, 0.0)


@pytest.mark.parametrize("beta", [0.5, 1.0, 10.0])
def test_conjugates_agree_with_vertex_enumeration(saddle, beta):
    u = np.array([0.0, 1.0])
    for p in np.linspace(-2 * beta, 3 * beta, 20):
        for q in np.linspace(-2 * beta, 2 * beta, 20):
            w = np.array([2 * p / beta, 2 * q / beta])
            grid_value = fitzpatrick_grid(saddle, u, w) - example_support(w)
            assert abs(example_condition_term(p, q, beta) - grid_value) <= 1e-9


def test_fitzpatrick_grid_edge_cases(saddle):
    assert fitzpatrick_grid(saddle, [0.0, 1.0], [0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    flat = _problem([[0.0]], [0.0], [0.0])
    # f = 0 reduces to the support function of the box
    assert fitzpatrick_grid(flat, [0.5, 0.5], [1.0, -2.0]) == pytest.approx(1.0)
    with pytest.raises(UsageError):
        fitzpatrick_grid(saddle, [2.0, 1.0], [0.0, 0.0])


def test_fitzpatrick_grid_falls_back_above_vertex_limit(caplog):
    sp = _problem(np.zeros((5, 5)), np.zeros(5), np.zeros(5))
    with caplog.at_level("WARNING"):
        value = fitzpatrick_grid(sp, np.full(10, 0.5), np.ones(10), grid=2)
    assert value == pytest.approx(10.0)
    assert "grid" in caplog.text


def test_condition_57_case_two_is_zero():
    sched = Schedule("summable", rho=1.0, decay=2.0)
    assert condition_57_partial_sum(sched, 0.0, 0.0, 1000) == 0.0
    assert series_trend(condition_57_terms(sched, 0.0, 0.0, 1000)) == "zero"


def test_condition_57_case_one_p_series():
    sched = Schedule("summable", rho=1.0, decay=2.0)
    total = condition_57_partial_sum(sched, 2.0, 0.0, 1_000_000, relative=True)
    assert abs(total - math.pi ** 2 / 3) <= 1e-5
    assert series_trend(condition_57_terms(sched, 2.0, 0.0, 10_000, relative=True)) == "converging"


def test_condition_57_constant_product_diverges():
    sched = Schedule("constant", lam0=1.0, beta0=1.0, coupled=False)
    terms = condition_57_terms(sched, 2.0, 0.0, 1000, lipschitz=0.0)
    assert_allclose(terms, 2.0)
    assert series_trend(terms) == "diverging"


def test_example_saddle_points_on_grid(saddle):
    pts = saddle_points_grid(saddle, 101)
    assert len(pts) == 1
    assert_array_equal(pts[0], [0.0, 1.0])


def test_constant_coupling_ep_solution():
    sp = _problem([[0.0]], [1.0], [1.0])
    inst = build_saddle_bep(sp, zero_bifunction(sp.k))
    sols = solve_ep_grid(inst.f, sp.k, 21)
    assert len(sols) == 1
    assert_array_equal(sols[0], [0.0, 1.0])


def test_grid_saddle_points_equal_ep_solutions():
    rng = np.random.default_rng(12)
    problems = [example_problem(), _problem([[0.0]], [1.0], [1.0])]
    problems += [random_saddle_problem(rng, 1, 1) for _ in range(3)]
    for sp in problems:
        inst = build_saddle_bep(sp, zero_bifunction(sp.k))
        ep = solve_ep_grid(inst.f, sp.k, 41)
        sad = saddle_points_grid(sp, 41)
        assert len(ep) == len(sad)
        for a, b in zip(ep, sad):
            assert_array_equal(a, b)
