import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.bifunctions import (OperatorBifunction, PairedOperatorBifunction, ProxBifunction,
                             bifunction_axioms, firm_nonexpansiveness_gap, operator_resolvent,
                             paired_zero, prox_resolvent, resolvent_certificate, zero_bifunction)
from app.errors import ConvergenceError, UsageError
from app.geometry import BoxSet, project_box, sampling_region
from app.operators import identity_map, quadratic_gradient


def test_zero_resolvent_is_projection(unit2):
    g = zero_bifunction(unit2)
    assert g.is_zero
    assert_array_equal(g.resolvent(3.0, [1.5, -0.2]), [1.0, 0.0])


def test_prox_resolvent_closed_form(unit2):
    g = ProxBifunction([0.3, 0.7], 1.0, unit2)
    # (x + lam*w*c) / (1 + lam*w) then clamp
    assert_allclose(prox_resolvent(g, 1.0, [1.0, 0.0]), [0.65, 0.35])
    assert_allclose(prox_resolvent(g, 1.0, [3.0, 3.0]), [1.0, 1.0])


def test_resolvent_rejects_non_positive_lambda(unit2):
    g = ProxBifunction([0.5, 0.5], 1.0, unit2)
    with pytest.raises(UsageError):
        g.resolvent(0.0, [0.5, 0.5])


def test_prox_requires_matching_center(unit2):
    with pytest.raises(UsageError):
        ProxBifunction([0.5], 1.0, unit2)
    with pytest.raises(UsageError):
        ProxBifunction([0.5, 0.5], -1.0, unit2)


@pytest.mark.parametrize("lam", [0.1, 0.7, 5.0])
def test_operator_resolvent_matches_prox(unit2, lam):
    prox = ProxBifunction([0.3, 0.7], 1.0, unit2)
    op = OperatorBifunction(quadratic_gradient(prox.center, prox.weight), unit2)
    xs = sampling_region(unit2).sample(np.random.default_rng(0), 200)
    assert_allclose(operator_resolvent(op, lam, xs), prox_resolvent(prox, lam, xs), atol=1e-8)


def test_operator_resolvent_budget(unit2):
    op = OperatorBifunction(quadratic_gradient([0.3, 0.7], 1.0), unit2)
    with pytest.raises(ConvergenceError) as info:
        operator_resolvent(op, 1.0, [3.0, -3.0], tol=1e-14, max_inner=2)
    assert info.value.last_iterate.shape == (2,)


def test_paired_bifunction_splits_coordinates(unit2):
    a1 = quadratic_gradient([0.5], 1.0)
    a2 = quadratic_gradient([0.5], 1.0)
    g = PairedOperatorBifunction(a1, a2, unit2)
    x, y = np.array([0.0, 1.0]), np.array([1.0, 0.0])
    # <A1 u1, u2 - u1> + <A2 v1, v2 - v1> = (-0.5)(1) + (0.5)(-1)
    assert g(x, y) == pytest.approx(-1.0)
    assert paired_zero(1, 1, unit2).is_zero


def test_paired_identity_resolvent_halves_the_point():
    # z + lam*z = x inside K
    k = BoxSet.from_intervals([(0.0, 3.0), (0.0, 3.0)])
    g = PairedOperatorBifunction(identity_map(1), identity_map(1), k)
    assert_allclose(operator_resolvent(g, 1.0, [2.0, 2.0]), [1.0, 1.0], atol=1e-9)


def test_paired_zero_resolvent_is_projection(unit2):
    g = paired_zero(1, 1, unit2)
    xs = np.array([[2.0, -1.0], [-0.5, 0.4], [1.5, 3.0], [0.2, 0.9]])
    for lam in (0.1, 1.0, 10.0):
        assert_array_equal(operator_resolvent(g, lam, xs), project_box(xs, unit2))


@pytest.mark.parametrize("lam", [0.01, 1.0, 100.0])
def test_prox_center_is_fixed_point(unit2, lam):
    g = ProxBifunction([0.3, 0.7], 2.0, unit2)
    assert_allclose(prox_resolvent(g, lam, [0.3, 0.7]), [0.3, 0.7], rtol=0, atol=1e-15)


@pytest.mark.parametrize("g_factory", [
    lambda k: zero_bifunction(k),
    lambda k: ProxBifunction([0.5, 0.5], 1.0, k),
    lambda k: OperatorBifunction(quadratic_gradient([0.5, 0.5], 1.0), k),
    lambda k: paired_zero(1, 1, k),
])
def test_resolvents_are_firmly_nonexpansive(unit2, g_factory):
    g = g_factory(unit2)
    assert firm_nonexpansiveness_gap(g, 0.7, 2000, seed=11) <= 1e-10


@pytest.mark.parametrize("g_factory", [
    lambda k: zero_bifunction(k),
    lambda k: ProxBifunction([0.3, 0.7], 1.0, k),
    lambda k: OperatorBifunction(quadratic_gradient([0.3, 0.7], 1.0), k),
])
def test_resolvent_certificate_nonnegative(unit2, g_factory):
    g = g_factory(unit2)
    rng = np.random.default_rng(5)
    for x in sampling_region(unit2).sample(rng, 20):
        z = g.resolvent(0.5, x)
        assert resolvent_certificate(g, 0.5, x, z) >= -1e-9


def test_certificate_detects_wrong_candidate(unit2):
    g = ProxBifunction([0.3, 0.7], 1.0, unit2)
    assert resolvent_certificate(g, 1.0, [0.3, 0.7], [1.0, 0.0]) < -0.1
    with pytest.raises(UsageError, match="lie in K"):
        resolvent_certificate(g, 1.0, [0.3, 0.7], [2.0, 0.0])


def test_bifunction_axioms(unit2):
    res = bifunction_axioms(ProxBifunction([0.3, 0.7], 1.0, unit2), 500, seed=0)
    assert res["passed"]
    assert res["diagonal_max_abs"] == 0.0


def test_one_dimensional_box():
    k = BoxSet.unit(1)
    g = ProxBifunction([2.0], 1.0, k)
    assert_array_equal(g.resolvent(1.0, [0.0]), [1.0])
