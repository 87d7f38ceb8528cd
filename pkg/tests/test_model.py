import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_transform import (
    CapabilityError,
    ConditionalEnergyModel,
    Domain,
    DomainError,
    SampleSet,
    freeze,
    toy_iid_model,
    toy_model,
    uniform_reference,
)
from poisson_transform.model import check_theta, toy_energy, toy_grad, toy_suff_stats
from poisson_transform.quadrature import gauss_legendre

unit = st.floats(-1.0, 1.0, allow_nan=False)
theta_st = st.tuples(st.floats(-5, 5), st.floats(-5, 80))


def test_toy_energy_values():
    assert toy_energy((0, 0), 0.3, 0.7) == 0.0
    assert toy_energy((1, 0), 0.5, -0.9) == 0.5
    assert toy_energy((-2, 50), 0.1, 0.0) == pytest.approx(-0.45, abs=1e-15)


def test_toy_grad_values():
    np.testing.assert_array_equal(toy_grad((3.0, 7.0), 0.0, 0.0), [0.0, 0.0])
    np.testing.assert_array_equal(toy_grad((3.0, 7.0), 1.0, -1.0), [1.0, -2.0])


def test_toy_grad_matches_central_difference():
    theta = np.array([-2.0, 50.0])
    h = 1e-5
    fd = [
        (toy_energy(theta + h * e, 0.1, 0.3) - toy_energy(theta - h * e, 0.1, 0.3)) / (2 * h)
        for e in np.eye(2)
    ]
    g = toy_grad(theta, 0.1, 0.3)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) <= 1e-8


def test_energy_rejects_points_outside_domain():
    with pytest.raises(DomainError):
        toy_energy((0, 0), 1.5, 0.0)
    with pytest.raises(DomainError):
        toy_model().f((0, 0), 0.0, -1.01)


def test_check_theta():
    with pytest.raises(DomainError):
        check_theta([1.0, np.nan])
    with pytest.raises(DomainError):
        check_theta([1.0, 2.0, 3.0], 2)
    np.testing.assert_array_equal(check_theta(3.0), [3.0])


def test_domain_validation():
    with pytest.raises(DomainError):
        Domain(1.0, 1.0)
    with pytest.raises(DomainError):
        Domain(-np.inf, 0.0)
    assert Domain(-2, 3).width == 5


@settings(max_examples=100, deadline=None)
@given(theta_st, unit, unit)
def test_gradient_matches_finite_differences(theta, y, p):
    theta = np.asarray(theta, float)
    for model in (toy_model(), toy_iid_model(0.25)):
        g = model.grad(theta, y, p)
        fd = np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-5 * max(1.0, abs(theta[j]))
            fd[j] = (model.f(theta + e, y, p) - model.f(theta - e, y, p)) / (2 * e[j])
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(theta_st, theta_st, st.floats(-3, 3), st.floats(-3, 3), unit, unit)
def test_energy_is_linear_in_theta(t1, t2, a, b, y, p):
    t1, t2 = np.asarray(t1), np.asarray(t2)
    lhs = toy_energy(a * t1 + b * t2, y, p)
    rhs = a * toy_energy(t1, y, p) + b * toy_energy(t2, y, p)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(theta_st, unit, unit)
def test_energy_equals_theta_dot_stats(theta, y, p):
    theta = np.asarray(theta)
    assert toy_energy(theta, y, p) == pytest.approx(theta @ toy_grad(theta, y, p), rel=1e-14, abs=1e-14)
    np.testing.assert_array_equal(toy_grad(theta, y, p), toy_suff_stats(y, p))


def test_vectorised_shapes(chain_model):
    y = np.linspace(-1, 1, 7)
    assert chain_model.f((1.0, 2.0), y, 0.0).shape == (7,)
    assert chain_model.grad((1.0, 2.0), y, y[::-1]).shape == (7, 2)
    assert chain_model.hess((1.0, 2.0), y, 0.0).shape == (7, 2, 2)
    assert np.all(chain_model.hess((1.0, 2.0), y, 0.0) == 0)


def test_iid_model_ignores_ancestor():
    m = toy_iid_model(0.3)
    assert m.iid
    assert m.f((1.0, 4.0), 0.5, -0.9) == m.f((1.0, 4.0), 0.5, 0.8) == toy_energy((1.0, 4.0), 0.5, 0.3)


def test_sample_set_ancestors():
    s = SampleSet(0.1, [0.2, -0.3, 0.4])
    np.testing.assert_array_equal(s.ancestors, [0.1, 0.2, -0.3])
    assert s.n == len(s) == 3
    with pytest.raises(ValueError):
        s.points[0] = 1.0
    with pytest.raises(DomainError):
        SampleSet(0.0, [])
    with pytest.raises(DomainError):
        SampleSet(0.0, [1.5]).check(Domain())


def test_uniform_reference():
    q = uniform_reference()
    assert q.log_density(0.2, 0.9) == pytest.approx(-math.log(2))
    draws = q.sampler(np.zeros(()), np.random.default_rng(0), 100_000)
    assert draws.shape == (100_000,)
    assert abs(draws.mean()) <= 3 / math.sqrt(3 * 1e5)
    rule = gauss_legendre(50)
    assert rule.integrate(np.exp(q.log_density(rule.nodes))) == pytest.approx(1.0, abs=1e-10)
    batch = q.sampler(np.array([0.1, 0.2, 0.3]), np.random.default_rng(1), 4)
    assert batch.shape == (3, 4)
    assert Domain().contains(batch)


def test_freeze_reduces_dimension(chain_model):
    frozen = freeze(chain_model, {1: 3.0})
    assert frozen.dim == 1
    y, p = np.array([0.2, -0.5]), np.array([0.1, 0.4])
    np.testing.assert_allclose(frozen.f([0.7], y, p), chain_model.f([0.7, 3.0], y, p))
    np.testing.assert_allclose(frozen.grad([0.7], y, p), chain_model.grad([0.7, 3.0], y, p)[:, :1])
    np.testing.assert_allclose(
        frozen.base(y, p) + frozen.stats(y, p) @ [0.7], chain_model.f([0.7, 3.0], y, p)
    )
    with pytest.raises(DomainError):
        freeze(chain_model, {0: 1.0, 1: 2.0})


def test_generic_model_without_stats():
    def energy(theta, y, y_prev):
        return -np.exp(theta[0]) * y ** 2

    def grad(theta, y, y_prev):
        return (-np.exp(theta[0]) * y ** 2)[..., None]

    m = ConditionalEnergyModel("gen", 1, Domain(), energy, grad, iid=True)
    assert not m.exponential_family
    with pytest.raises(CapabilityError):
        m.stats(0.1, 0.0)
    h = m.hess([0.3], np.array([0.5]), 0.0)
    assert h[0, 0, 0] == pytest.approx(-np.exp(0.3) * 0.25, rel=1e-6)
