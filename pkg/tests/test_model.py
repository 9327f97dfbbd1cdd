import math

import numpy as np
import pytest
from scipy import stats

from bppcd.chain import StatePath, TimeGrid
from bppcd.errors import InvalidInputError
from bppcd.model import (
    HarmonicSpec,
    RobustConfig,
    SegmentParams,
    build_design,
    conditional_harmonic_covariance,
    contrast_prior_covariance,
    contrast_rows,
    expand_contrasts,
    gaussian_logpdf,
    lst_logpdf,
    mean_function,
    mean_rows,
    q_posterior,
    year_index,
)


def test_harmonic_dimensions():
    s = HarmonicSpec(2, 3650.0, years=10)
    assert s.p == 6 and s.p_phi == 20
    assert HarmonicSpec(0, 100.0, with_trend=False, with_contrasts=False).p == 1
    with pytest.raises(InvalidInputError):
        HarmonicSpec(1, 100.0)


def test_omega_puts_year_boundaries_on_full_periods():
    g = TimeGrid.from_raw(np.arange(0, 3 * 365, 10.0))
    spec = HarmonicSpec.for_grid(g, 2)
    tb = 365.0 / g.raw_span_days
    assert math.sin(spec.omega * tb) == pytest.approx(0, abs=1e-12)
    assert spec.years == 3


def test_year_index():
    np.testing.assert_array_equal(year_index([0, 364.9, 365, 800]), [0, 0, 1, 2])


def test_mean_rows_derivative_matches_finite_difference():
    spec = HarmonicSpec(3, 1000.0, with_contrasts=False)
    t = np.array([0.1, 0.47])
    h = 1e-6
    fd = (mean_rows(t + h, spec) - mean_rows(t - h, spec)) / (2 * h)
    np.testing.assert_allclose(mean_rows(t, spec, derivative=True), fd, rtol=1e-6, atol=1e-6)


def test_contrast_derivative_matches_finite_difference():
    spec = HarmonicSpec(3, 1000.0, years=3)
    t = np.array([0.2, 0.5])
    h = 1e-6
    fd = (contrast_rows(t + h, 1, spec) - contrast_rows(t - h, 1, spec)) / (2 * h)
    np.testing.assert_allclose(contrast_rows(t, 1, spec, derivative=True), fd, rtol=1e-6, atol=1e-6)


def test_contrast_columns_only_fill_own_year():
    spec = HarmonicSpec(2, 1000.0, years=3)
    W = contrast_rows([0.1, 0.1], [0, 2], spec)
    assert np.all(W[0, 2:] == 0) and np.all(W[1, :4] == 0)


def test_expanded_contrasts_satisfy_constraints():
    phi = np.random.default_rng(0).normal(size=2 * 3 * 2)
    gamma, delta = expand_contrasts(phi, 4, 2)
    h = np.arange(1, 5)
    np.testing.assert_allclose(delta.sum(axis=1), 0, atol=1e-14)
    np.testing.assert_allclose(gamma @ h, 0, atol=1e-14)


def test_expanded_contrasts_reproduce_reduced_design():
    rng = np.random.default_rng(3)
    H, years = 3, 2
    spec = HarmonicSpec(H, 730.0, years=years)
    phi = rng.normal(size=spec.p_phi)
    t = rng.uniform(0, 0.49, 5)
    gamma, delta = expand_contrasts(phi, H, years)
    a = np.arange(1, H + 1)[None, :] * spec.omega * t[:, None]
    full = np.sin(a) @ gamma[0] + np.cos(a) @ delta[0]
    np.testing.assert_allclose(contrast_rows(t, 0, spec) @ phi, full, atol=1e-13)


def test_cosine_block_prior_examples():
    assert conditional_harmonic_covariance(2, 1.0, 1.0)[0, 0] == pytest.approx(0.26894, abs=1e-5)
    assert conditional_harmonic_covariance(2, 1.0, 0.0)[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_conditional_covariance_matches_sampling_definition():
    H, psi, lam = 3, 2.0, 0.7
    rng = np.random.default_rng(9)
    sd = np.sqrt(psi * np.exp(lam * (1 - np.arange(1, H + 1))))
    c = rng.normal(size=(400000, H)) * sd
    a = np.arange(1, H + 1) / H
    # condition on a'c = 0 by regression on the constraint
    v = sd**2 * a
    proj = c - np.outer(c @ a, v) / (a @ v)
    emp = np.cov(proj[:, : H - 1].T)
    np.testing.assert_allclose(conditional_harmonic_covariance(H, psi, lam, a), emp, rtol=0.02, atol=2e-3)


def test_contrast_prior_is_block_inverse():
    cov, prec = contrast_prior_covariance(3, 1.0, 1.0, 2)
    np.testing.assert_allclose(cov @ prec, np.eye(8), atol=1e-12)


def test_build_design_shapes():
    g = TimeGrid.from_raw(np.arange(0, 1000, 20.0))
    b = build_design(g, HarmonicSpec.for_grid(g, 2))
    assert b.X.shape == (50, 6) and b.W.shape == (50, 2 * 3)
    assert b.prior_precision_theta[1, 1] == 5.0
    assert b.log_det_theta_precision() == pytest.approx(math.log(5))


def test_lst_logpdf_matches_scipy():
    y = np.linspace(-4, 4, 9)
    for nu in (1.0, 3.0, 30.0):
        ref = stats.t.logpdf(y, nu, loc=0.5, scale=math.sqrt(0.3))
        np.testing.assert_allclose(lst_logpdf(y, 0.5, 0.3, nu), ref, rtol=1e-12)


def test_gaussian_logpdf_matches_scipy():
    np.testing.assert_allclose(gaussian_logpdf(np.array([0.1, 2.0]), 1.0, 0.4),
                               stats.norm.logpdf([0.1, 2.0], 1.0, math.sqrt(0.4)), rtol=1e-12)


def test_q_posterior_at_zero_residual():
    q = q_posterior(np.zeros(3), 1.0, 3.0)
    np.testing.assert_allclose(q.mean, 4 / 3)
    np.testing.assert_allclose(q.shape, 2.0)


def test_t_density_is_gamma_mixture_of_normals():
    from scipy import integrate

    nu, s2, r = 3.0, 0.5, 1.3

    def integrand(q):
        return stats.norm.pdf(r, 0, math.sqrt(s2 / q)) * stats.gamma.pdf(q, nu / 2, scale=2 / nu)

    val, _ = integrate.quad(integrand, 0, np.inf)
    assert math.log(val) == pytest.approx(float(lst_logpdf(r, 0.0, s2, nu)), rel=1e-8)


def test_robust_config_gaussian_mode():
    rc = RobustConfig(mode="gaussian")
    np.testing.assert_array_equal(rc.q_mean(np.array([1.0, 100.0]), 1.0), [1, 1])


def test_mean_function_follows_path():
    g = TimeGrid.from_raw(np.arange(6.0))
    b = build_design(g, HarmonicSpec(0, g.raw_span_days, with_trend=False, with_contrasts=False))
    params = SegmentParams(np.array([[1.0], [5.0]]), np.zeros(0), 1.0)
    np.testing.assert_array_equal(mean_function(params, b, StatePath([1, 1, 1, 2, 2, 2])), [1, 1, 1, 5, 5, 5])
    with pytest.raises(InvalidInputError):
        mean_function(params, b, StatePath([1, 1, 1, 2, 3, 3]))
