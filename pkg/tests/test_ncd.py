import dataclasses
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
)
from poisson_transform.chain import sample_chain, sample_iid
from poisson_transform.checks import central_difference, chord_violation, relative_error
from poisson_transform.model import uniform_reference
from poisson_transform.ncd import (
    Kernel,
    NcdDataset,
    build_dataset,
    fit_ncd_iid,
    fit_ncd_ignore,
    fit_ncd_param,
    fit_ncd_semi,
    logistic_deviance,
    median_bandwidth,
    ncd_grad,
    ncd_objective,
    select_lambda,
)
from poisson_transform.poisson import nu_star
from poisson_transform.quadrature import fit_ml

Q = uniform_reference(Domain())


def test_counting():
    ds = build_dataset(SampleSet(0.0, [0.1, 0.2, 0.3]), Q, 2, np.random.default_rng(0))
    assert (ds.n, ds.k, ds.m, ds.size) == (3, 2, 6, 9)
    assert ds.z.sum() == 3
    np.testing.assert_array_equal(ds.u[:3], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(ds.ancestors, [0.0, 0.1, 0.2])
    np.testing.assert_allclose(ds.log_q, -math.log(2))
    pts = ds.points
    assert len(pts) == 9 and pts[0].z == 1 and pts[3].z == 0 and pts[3].ancestor_index == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_counting_invariant(n, k, seed):
    rng = np.random.default_rng(seed)
    s = SampleSet(0.0, rng.uniform(-1, 1, n))
    ds = build_dataset(s, Q, k, rng)
    np.testing.assert_array_equal(np.bincount(ds.ancestor[ds.z == 1], minlength=n), np.ones(n))
    np.testing.assert_array_equal(np.bincount(ds.ancestor[ds.z == 0], minlength=n), np.full(n, k))
    np.testing.assert_array_equal(ds.u_prev, ds.ancestors[ds.ancestor])
    assert np.all(np.abs(ds.u) <= 1)


def test_build_dataset_errors():
    with pytest.raises(DomainError):
        build_dataset(SampleSet(0.0, [0.1]), Q, 0, np.random.default_rng(0))
    bad = dataclasses.replace(Q, sampler=lambda anc, rng, k: np.full((np.size(anc), k), 2.0))
    with pytest.raises(DomainError):
        build_dataset(SampleSet(0.0, [0.1]), bad, 2, np.random.default_rng(0))


def test_dataset_deterministic(small_chain):
    a = build_dataset(small_chain, Q, 5, np.random.default_rng(4))
    b = build_dataset(small_chain, Q, 5, np.random.default_rng(4))
    np.testing.assert_array_equal(a.u, b.u)
    model_fit = [fit_ncd_iid(toy_iid_model(0.0), d).theta_hat for d in (a, b)]
    np.testing.assert_array_equal(*model_fit)


def test_log_odds_arithmetic():
    ds = build_dataset(SampleSet(0.0, [0.5]), Q, 10, np.random.default_rng(0))
    # f = 0, nu = 0: the log-odds reduce to the offset
    np.testing.assert_allclose(ds.offset, math.log(2) - math.log(10), atol=1e-15)
    assert ds.offset[0] == pytest.approx(-1.6094379, abs=1e-7)


def test_indistinguishable_gives_half(iid_model):
    s = SampleSet(0.0, [0.1, -0.3, 0.7, 0.2])
    ds = build_dataset(s, Q, 3, np.random.default_rng(1))
    # theta = 0 and nu = log q + log(m/n) make every log-odds zero
    nu = -math.log(2) + math.log(3)
    assert ncd_objective(iid_model, (0, 0), nu, ds) == pytest.approx(-(ds.n + ds.m) * math.log(2), abs=1e-12)


def test_relabel_symmetry():
    rng = np.random.default_rng(2)
    eta = rng.normal(0, 3, 200)
    z = rng.integers(0, 2, 200)
    assert logistic_deviance(-eta, 1 - z) == pytest.approx(logistic_deviance(eta, z), rel=1e-14)


def test_deviance_is_stable_for_extreme_log_odds():
    d = logistic_deviance([800.0, -800.0], [0, 1])
    assert d == pytest.approx(2 * 1600.0)


def test_ncd_gradient(iid_model, iid_sample):
    ds = build_dataset(iid_sample, Q, 5, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = np.array([rng.uniform(-2, 2), rng.uniform(0, 30), rng.uniform(-2, 1)])
        fd = central_difference(lambda v: ncd_objective(iid_model, v[:2], v[2], ds), x)
        assert relative_error(ncd_grad(iid_model, x[:2], x[2], ds), fd) <= 1e-6


def test_ncd_iid_chord_concavity(iid_model, iid_sample):
    ds = build_dataset(iid_sample, Q, 5, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    fun = lambda v: ncd_objective(iid_model, v[:2], v[2], ds)  # noqa: E731
    for _ in range(50):
        a = np.array([rng.uniform(-3, 3), rng.uniform(0, 60), rng.uniform(-4, 2)])
        b = np.array([rng.uniform(-3, 3), rng.uniform(0, 60), rng.uniform(-4, 2)])
        assert chord_violation(fun, a, b) <= 1e-8 * max(1.0, abs(fun(a)), abs(fun(b)))


def test_fit_iid_matches_ml_at_large_k(iid_model):
    s = sample_iid((0.4, 3.0), 300, 0.0, np.random.default_rng(7))
    ml = fit_ml(iid_model, s)
    fits = [fit_ncd_iid(iid_model, build_dataset(s, Q, 1000, np.random.default_rng(100 + r))) for r in range(20)]
    assert all(f.converged for f in fits)
    thetas = np.array([f.theta_hat for f in fits])
    mc_se = thetas.std(axis=0, ddof=1)
    assert np.all(np.abs(thetas.mean(axis=0) - ml.theta_hat) <= 2 * mc_se), (thetas.mean(axis=0), ml.theta_hat, mc_se)
    for f in fits:
        assert f.nu == pytest.approx(nu_star(iid_model, f.theta_hat, 0.0), abs=0.05)


def test_fit_iid_needs_exponential_family():
    m = ConditionalEnergyModel(
        "gen", 1, Domain(), lambda t, y, p: -np.exp(t[0]) * y ** 2,
        lambda t, y, p: (-np.exp(t[0]) * y ** 2)[..., None], iid=True,
    )
    ds = build_dataset(SampleSet(0.0, [0.1, 0.2]), Q, 2, np.random.default_rng(0))
    with pytest.raises(CapabilityError):
        fit_ncd_iid(m, ds)


def test_offset_shift_invariance(iid_model, iid_sample):
    ds = build_dataset(iid_sample, Q, 10, np.random.default_rng(8))
    c = 0.75
    shifted = dataclasses.replace(ds, log_q=ds.log_q + c)
    a, b = fit_ncd_iid(iid_model, ds), fit_ncd_iid(iid_model, shifted)
    np.testing.assert_allclose(b.theta_hat, a.theta_hat, atol=1e-9)
    assert b.nu == pytest.approx(a.nu + c, abs=1e-9)
    assert b.deviance == pytest.approx(a.deviance, rel=1e-12)


def test_separation_is_flagged(iid_model):
    # positives all at 1, negatives all below: the classes separate in theta_1
    ds = NcdDataset(
        u=np.array([1.0, 1.0, -0.5, -0.6, -0.7, -0.8]), u_prev=np.zeros(6),
        z=np.array([1, 1, 0, 0, 0, 0], dtype=np.int8), log_q=np.full(6, -math.log(2)),
        ancestor=np.array([0, 1, 0, 0, 1, 1]), n=2, k=2,
    )
    fit = fit_ncd_iid(iid_model, ds)
    assert not fit.converged
    assert fit.diagnostics


# --------------------------------------------------------------------------
# per-ancestor intercepts


def test_param_single_ancestor_equals_iid(iid_model):
    ds = build_dataset(SampleSet(0.0, [0.3]), Q, 40, np.random.default_rng(9))
    frozen = freeze(iid_model, {1: 0.0})
    a = fit_ncd_iid(frozen, ds, tol=1e-10)
    b = fit_ncd_param(frozen, ds, tol=1e-10)
    np.testing.assert_allclose(b.theta_hat, a.theta_hat, atol=1e-7)
    assert b.nu_vec[0] == pytest.approx(a.nu, abs=1e-7)


def test_param_intercepts_track_normalisers(chain_model):
    s = sample_chain((0.5, 8.0), 100, 0.0, np.random.default_rng(10))
    fit = fit_ncd_param(chain_model, build_dataset(s, Q, 1000, np.random.default_rng(11)))
    assert fit.converged
    target = nu_star(chain_model, fit.theta_hat, s.ancestors)
    assert np.mean(np.abs(fit.nu_vec - target) <= 0.1) >= 0.9


def test_param_unidentified_ancestor(chain_model):
    s = SampleSet(0.0, [0.2, -0.4, 0.6])
    ds = build_dataset(s, Q, 3, np.random.default_rng(12))
    u = ds.u.copy()
    u[ds.ancestor == 1] = -0.4
    fit = fit_ncd_param(chain_model, dataclasses.replace(ds, u=u))
    assert any("ancestors [1]" in d for d in fit.diagnostics)


# --------------------------------------------------------------------------
# semi-parametric


@pytest.fixture(scope="module")
def chain_ds(chain_model):
    s = sample_chain((0.5, 10.0), 2000, 0.0, np.random.default_rng(13))
    return s, build_dataset(s, Q, 30, np.random.default_rng(14))


def test_semi_infinite_penalty_matches_ignore(chain_model, chain_ds):
    _, ds = chain_ds
    heavy = fit_ncd_semi(chain_model, ds, lambda_pen=1e12)
    ign = fit_ncd_ignore(chain_model, ds)
    assert np.max(np.abs(heavy.chi.alpha)) < 1e-6
    np.testing.assert_allclose(heavy.theta_hat, ign.theta_hat, atol=1e-5)
    assert heavy.nu == pytest.approx(ign.nu, abs=1e-5)


def test_semi_chi_tracks_normalisers(chain_model, chain_ds):
    s, ds = chain_ds
    lam = select_lambda(chain_model, ds, rng=np.random.default_rng(15))
    fit = fit_ncd_semi(chain_model, ds, lambda_pen=lam)
    assert fit.converged
    r = np.corrcoef(fit.normaliser(s.ancestors), nu_star(chain_model, fit.theta_hat, s.ancestors))[0, 1]
    assert r >= 0.95


def test_semi_deterministic(chain_model, small_chain):
    ds = build_dataset(small_chain, Q, 10, np.random.default_rng(16))
    a = fit_ncd_semi(chain_model, ds, Kernel(0.5), 0.1)
    b = fit_ncd_semi(chain_model, ds, Kernel(0.5), 0.1)
    np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
    np.testing.assert_array_equal(a.chi.alpha, b.chi.alpha)


def test_semi_negative_penalty(chain_model, small_chain):
    ds = build_dataset(small_chain, Q, 2, np.random.default_rng(0))
    with pytest.raises(DomainError):
        fit_ncd_semi(chain_model, ds, lambda_pen=-1.0)


# --------------------------------------------------------------------------
# penalty selection


def test_select_lambda_single_grid(chain_model, small_chain):
    ds = build_dataset(small_chain, Q, 5, np.random.default_rng(17))
    assert select_lambda(chain_model, ds, grid=[0.3]) == 0.3


def test_select_lambda_argument_errors(chain_model, small_chain):
    ds = build_dataset(small_chain, Q, 5, np.random.default_rng(17))
    with pytest.raises(DomainError):
        select_lambda(chain_model, ds, grid=[])
    with pytest.raises(DomainError):
        select_lambda(chain_model, ds, folds=1)


def test_select_lambda_returns_grid_member_with_min_score(chain_model, small_chain):
    ds = build_dataset(small_chain, Q, 5, np.random.default_rng(18))
    grid = [1.0, 1e-2, 1e-4]
    lam, scores = select_lambda(chain_model, ds, grid=grid, rng=np.random.default_rng(19), return_scores=True)
    assert lam in grid
    assert scores[sorted(grid, reverse=True).index(lam)] == scores.min()


def test_select_lambda_pure_noise_prefers_max_smoothing(chain_model):
    # positives drawn from q itself carry no signal about the normaliser
    hits = 0
    grid_max = 100.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        y = rng.uniform(-1, 1, 501)
        s = SampleSet(float(y[0]), y[1:])
        ds = build_dataset(s, Q, 10, rng)
        hits += select_lambda(chain_model, ds, rng=rng) == grid_max
    assert hits >= 40, f"grid maximum chosen in {hits}/50 seeds"


def test_median_bandwidth_examples():
    assert median_bandwidth([0, 1]) == 1
    assert median_bandwidth([0, 1, 2]) == 1
    # |U - U'| has cdf d - d^2/4 on [0, 2], so its median is 2 - sqrt(2)
    rng = np.random.default_rng(20)
    u = rng.uniform(-1, 1, 10_000)
    brute = np.median(np.abs(rng.uniform(-1, 1, 200_000) - rng.uniform(-1, 1, 200_000)))
    assert brute == pytest.approx(2 - math.sqrt(2), abs=0.005)
    assert median_bandwidth(u) == pytest.approx(2 - math.sqrt(2), abs=0.02)
    with pytest.raises(DomainError):
        median_bandwidth([0.3, 0.3, 0.3])
