import numpy as np
import pytest

from bppcd.chain import TimeGrid
from bppcd.config import RunConfig
from bppcd.errors import InvalidInputError, NumericFailureError
from bppcd.inference import (
    FitResult,
    bayes_estimator,
    detect,
    em_fit,
    forward_backward,
    log_posterior_num_segments,
    m_step,
    q_function,
)
from bppcd.model import HarmonicSpec, RobustConfig, build_design

import oracles
from conftest import random_grid


def intercept_bundle(grid, trend=False):
    spec = HarmonicSpec(0, grid.raw_span_days, with_trend=trend, with_contrasts=False)
    return build_design(grid, spec, beta_precision=0.0)


# -- forward-backward ---------------------------------------------------------

def test_k1_evidence_is_sum_of_loglik(rng):
    g = random_grid(rng, 9)
    ll = rng.normal(size=(9, 1))
    assert forward_backward(1, g, ll).log_marginal_likelihood == pytest.approx(ll.sum(), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_forward_backward_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, 7)
    ll = rng.normal(scale=2.0, size=(7, 3))
    fb = forward_backward(3, g, ll)
    _, _, lz = oracles.enumerate_posterior(ll, g.times, 3)
    assert fb.log_marginal_likelihood == pytest.approx(lz, abs=1e-10)
    np.testing.assert_allclose(fb.marginals, oracles.enumerated_marginals(ll, g.times, 3), atol=1e-10)


def test_marginal_and_pairwise_invariants(rng):
    g = random_grid(rng, 30)
    ll = rng.normal(size=(30, 4))
    fb = forward_backward(4, g, ll)
    np.testing.assert_allclose(fb.marginals.sum(axis=1), 1, atol=1e-10)
    np.testing.assert_array_equal(fb.marginals[0], [1, 0, 0, 0])
    np.testing.assert_allclose(fb.pairwise.sum(axis=2), fb.marginals[:-1], atol=1e-10)
    np.testing.assert_allclose(fb.pairwise.sum(axis=1), fb.marginals[1:], atol=1e-10)
    lower = np.tril(np.ones((4, 4), bool), -1)
    assert np.all(fb.pairwise[:, lower] == 0.0)


def test_forward_backward_rejects_dead_rows(rng):
    g = random_grid(rng, 5)
    ll = np.zeros((5, 2))
    ll[3] = -np.inf
    with pytest.raises(NumericFailureError, match="observation"):
        forward_backward(2, g, ll)


def test_forward_backward_unreachable_mass(rng):
    g = random_grid(rng, 5)
    ll = np.zeros((5, 2))
    ll[:, 0] = -np.inf  # the chain must start in state 1
    with pytest.raises(NumericFailureError):
        forward_backward(2, g, ll)


# -- EM -------------------------------------------------------------------------

def test_k1_gaussian_flat_prior_is_ols(rng):
    g = random_grid(rng, 40)
    b = intercept_bundle(g, trend=True)
    y = 2 + 3 * g.times + rng.normal(size=40)
    fit = em_fit(y, g, b, 1, RobustConfig(mode="gaussian"))
    beta, rss = oracles.ols(b.X, y)
    np.testing.assert_allclose(fit.params.theta[0], beta, rtol=1e-8, atol=1e-8)
    assert fit.params.sigma2 == pytest.approx(rss / (40 + 2 + 2), rel=1e-8)


def test_zero_residual_q_weights(rng):
    g = random_grid(rng, 20)
    b = intercept_bundle(g)
    fit = em_fit(np.full(20, 3.0), g, b, 1, RobustConfig(nu=3))
    np.testing.assert_allclose(fit.q_means, 4 / 3)


@pytest.mark.parametrize("seed", range(8))
def test_em_trace_monotone(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_grid(rng, 60, 1500.0)
    b = build_design(g, HarmonicSpec.for_grid(g, 2))
    y = np.sin(6 * g.times) + (g.times > 0.5) * 1.5 + rng.standard_t(3, 60) * 0.3
    fit = em_fit(y, g, b, 3, RobustConfig(nu=3))
    assert np.all(np.diff(fit.trace) >= -1e-8)
    assert np.all(fit.q_means >= 0) and not fit.warnings


def test_m_step_is_stationary_for_q_function(rng):
    g = random_grid(rng, 50, 1200.0)
    b = build_design(g, HarmonicSpec.for_grid(g, 2))
    y = rng.normal(size=50) + (g.times > 0.4)
    fit = em_fit(y, g, b, 2, RobustConfig(nu=3))
    marg, qw = fit.fb.marginals, fit.q_means
    p = m_step(y, b, marg, qw)
    x0 = np.concatenate([p.theta.ravel(), p.phi, [p.sigma2]])

    def f(x):
        k = p.theta.shape[0]
        th = x[: k * b.p].reshape(k, b.p)
        return q_function(type(p)(th, x[k * b.p:-1], x[-1]), y, b, marg, qw)

    q0 = f(x0)
    for i in range(x0.size):
        h = 1e-6 * max(1.0, abs(x0[i]))
        e = np.zeros_like(x0)
        e[i] = h
        grad = (f(x0 + e) - f(x0 - e)) / (2 * h)
        assert abs(grad) * max(1.0, abs(x0[i])) / max(1.0, abs(q0)) < 1e-5


def test_em_requires_enough_data(rng):
    g = random_grid(rng, 4)
    b = build_design(g, HarmonicSpec(2, g.raw_span_days, with_contrasts=False))
    with pytest.raises(InvalidInputError):
        em_fit(rng.normal(size=4), g, b, 1)


# -- posterior over k ---------------------------------------------------------

def _fits(rng, K):
    g = random_grid(rng, 80)
    b = intercept_bundle(g)
    y = rng.normal(size=80)
    return g, [em_fit(y, g, b, k) for k in range(1, K + 1)]


def test_single_k_posterior_is_one(rng):
    g, fits = _fits(rng, 1)
    np.testing.assert_allclose(np.exp(log_posterior_num_segments(fits, g)), [1.0])


def test_prior_variants_differ_only_by_prior(rng):
    from bppcd.chain import log_prior_num_segments

    g, fits = _fits(rng, 3)
    a = log_posterior_num_segments(fits, g, "noninformative")
    b = log_posterior_num_segments(fits, g, "equal_volume")
    prior = np.array([log_prior_num_segments(k, g, 1, 0.0) for k in (1, 2, 3)])
    diff = (a - b) - 2 * prior
    np.testing.assert_allclose(diff - diff[0], 0, atol=1e-10)


def test_posterior_needs_contiguous_k(rng):
    g, fits = _fits(rng, 2)
    with pytest.raises(InvalidInputError):
        log_posterior_num_segments(fits[1:], g)


# -- Bayes estimator ----------------------------------------------------------

def test_degenerate_posterior_returns_path():
    g = TimeGrid.from_raw(np.arange(5.0))
    m = np.eye(3)[[0, 0, 1, 1, 2]]
    path, changes = bayes_estimator([m[:, :1] * 0, m[:, :2] * 0, m], [-np.inf, -np.inf, 0.0], g)
    np.testing.assert_array_equal(path.states, [1, 1, 2, 2, 3])
    assert [c.index for c in changes] == [2, 4]


def test_multi_jump_gives_one_record_per_unit():
    g = TimeGrid.from_raw(np.arange(4.0))
    m = np.eye(3)[[0, 0, 2, 2]]
    path, changes = bayes_estimator([m], [0.0], g)
    assert [(c.from_state, c.to_state, c.index) for c in changes] == [(1, 2, 2), (2, 3, 2)]


@pytest.mark.parametrize("seed", range(6))
def test_bayes_estimator_minimizes_enumerated_risk(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, 6)
    margs = [oracles.enumerated_marginals(rng.normal(scale=2, size=(6, k)), g.times, k) for k in (1, 2, 3)]
    lpk = np.log(rng.dirichlet(np.ones(3)))
    path, _ = bayes_estimator(margs, lpk, g)
    mix = sum(np.exp(l) * np.pad(m, ((0, 0), (0, 3 - m.shape[1]))) for l, m in zip(lpk, margs))
    risks = [oracles.weighted_hamming_risk(z, mix, g.times) for z in oracles.monotone_paths(6, 3)]
    assert oracles.weighted_hamming_risk(path.states, mix, g.times) <= min(risks) + 1e-12


# -- detect -------------------------------------------------------------------

def test_detect_constant_series_has_no_changes():
    d = np.arange(0, 3650, 20.0)
    r = detect(np.full(d.size, 0.4), d, RunConfig(K_max=3))
    assert r.n_changes == 0 and r.map_k == 1


def test_detect_single_large_jump():
    rng = np.random.default_rng(4)
    d = np.arange(201) * 18.0
    y = rng.normal(size=201) + 10 * (np.arange(201) >= 100)
    r = detect(y, d, RunConfig(H=0, trend=False, contrasts=False))
    assert r.n_changes == 1
    assert abs(r.change_times[0].std_time - r.grid.times[100]) <= 0.0225
    assert r.change_times[0].raw_time == d[100]


def test_detect_sorts_input_and_reports_rows():
    rng = np.random.default_rng(0)
    d = np.arange(60) * 30.0
    y = rng.normal(size=60)
    perm = rng.permutation(60)
    a = detect(y, d, RunConfig(K_max=2))
    b = detect(y[perm], d[perm], RunConfig(K_max=2))
    np.testing.assert_allclose(a.log_post_k, b.log_post_k, atol=1e-12)
    y[[5, 9]] = np.nan
    with pytest.raises(InvalidInputError, match=r"\[5, 9\]"):
        detect(y, d)
    with pytest.raises(InvalidInputError, match="duplicate"):
        detect(np.zeros(60), np.r_[d[:-1], d[3]])


def test_detect_fitted_uses_map_fit():
    rng = np.random.default_rng(2)
    d = np.arange(120) * 30.0
    y = rng.normal(size=120) * 0.1 + (np.arange(120) > 60)
    r = detect(y, d, RunConfig(K_max=3, H=0, contrasts=False))
    assert r.fitted.shape == (120,)
    assert np.mean((y - r.fitted) ** 2) < 0.05
    assert isinstance(r.fits[0], FitResult)
