"""Exact posterior machinery for a fixed number of segments and across ``k``.

For each ``k`` the segment parameters are fitted by EM: the E-step runs the
forward-backward recursions over the change-point chain with the marginal
t likelihood and takes Gamma expectations of the latent precision scales,
the M-step solves one weighted ridge system for all segment coefficients and
the shared contrasts, then updates the shared variance in closed form.
The number of segments is chosen through a BIC-Laplace approximation and
the reported path is the componentwise posterior median.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import kernels
from .chain import (
    StatePath,
    TimeGrid,
    bpp_log_transitions,
    discrete_log_transitions,
    log_prior_num_segments,
)
from .config import RunConfig
from .errors import InvalidInputError, NumericFailureError
from .model import (
    DesignBundle,
    HarmonicSpec,
    RobustConfig,
    SegmentParams,
    build_design,
    mean_function,
    segment_means,
)

log = logging.getLogger(__name__)

# keeps segment blocks of the normal equations positive definite when a
# state carries no posterior mass and its coefficients have a flat prior
RIDGE = 1e-10
SIGMA2_FLOOR = 1e-12
MONOTONE_SLACK = 1e-8


@dataclass
class FBResult:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    marginals: np.ndarray
    pairwise: np.ndarray
    log_marginal_likelihood: float


@dataclass
class FitResult:
    k: int
    params: SegmentParams
    fb: FBResult
    q_means: np.ndarray
    trace: list
    converged: bool
    n_iter: int = 0
    loglik_trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    p: int = 0
    p_phi: int = 0
    log_det_theta_precision: float = 0.0

    @property
    def log_marginal_likelihood(self) -> float:
        return self.fb.log_marginal_likelihood


class ChangeRecord(NamedTuple):
    raw_time: object
    std_time: float
    from_state: int
    to_state: int
    index: int


@dataclass
class DetectionReport:
    log_post_k: np.ndarray
    map_k: int
    bayes_path: StatePath
    change_times: list
    fitted: np.ndarray
    fits: list
    grid: TimeGrid
    bundle: DesignBundle
    config: RunConfig
    map_path: StatePath = None
    y: np.ndarray = None

    @property
    def n_changes(self) -> int:
        return len(self.change_times)

    @property
    def posterior_k(self) -> np.ndarray:
        return np.exp(self.log_post_k)


# --------------------------------------------------------------------------
# forward-backward

def log_transitions(k: int, grid: TimeGrid, chain: str = "continuous") -> np.ndarray:
    """Log transition tensor ``(n, k, k)`` of the prior chain over ``grid``."""
    if chain == "continuous":
        return bpp_log_transitions(k, grid.times)
    if chain == "discrete":
        return discrete_log_transitions(grid.n, k)
    raise InvalidInputError(f"unknown chain {chain!r}")


def forward_backward(k: int, grid: TimeGrid, loglik, log_trans=None) -> FBResult:
    """Posterior state marginals, pairwise marginals and log marginal likelihood.

    ``loglik[i, j]`` is the log likelihood of observation ``i`` under state
    ``j + 1``. The chain starts in state 1 at ``t_0`` and moves with the BPP
    kernel unless another ``log_trans`` tensor is supplied.
    """
    loglik = np.ascontiguousarray(loglik, dtype=float)
    N = len(grid)
    if loglik.shape != (N, k):
        raise InvalidInputError(f"loglik has shape {loglik.shape}, expected {(N, k)}")
    if np.any(np.isnan(loglik)) or np.any(loglik == np.inf):
        raise InvalidInputError("loglik contains NaN or +inf")
    dead = np.flatnonzero(np.all(loglik == -np.inf, axis=1))
    if dead.size:
        raise NumericFailureError(
            f"observation(s) {dead[:10].tolist()} have zero likelihood under every state"
        )
    if log_trans is None:
        log_trans = bpp_log_transitions(k, grid.times)
    log_trans = np.ascontiguousarray(log_trans, dtype=float)

    la = kernels.forward(loglik, log_trans)
    log_z = float(logsumexp(la[-1]))
    if not np.isfinite(log_z):
        stuck = np.flatnonzero(np.all(la == -np.inf, axis=1))
        where = int(stuck[0]) if stuck.size else N - 1
        raise NumericFailureError(
            f"forward pass lost all mass at observation {where} (k={k}); "
            "the data cannot be reached by any admissible state path"
        )
    lb = kernels.backward(loglik, log_trans)
    lm = la + lb - log_z
    marg = np.exp(lm)
    marg /= marg.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        pw = np.exp(kernels.pairwise_log(la, lb, loglik, log_trans, log_z))
    pw = np.nan_to_num(pw, nan=0.0)
    return FBResult(la, lb, marg, pw, log_z)


# --------------------------------------------------------------------------
# EM

def _normal_system(y, bundle, weights, lam_theta):
    """Stacked normal equations for ``(theta_1..theta_k, phi)``."""
    X, W = bundle.X, bundle.W
    N, k = weights.shape
    p, q = X.shape[1], W.shape[1]
    d = k * p + q
    A = np.zeros((d, d))
    b = np.zeros(d)
    wsum = weights.sum(axis=1)
    for j in range(k):
        Xw = X * weights[:, j, None]
        s = slice(j * p, (j + 1) * p)
        A[s, s] = Xw.T @ X + lam_theta
        b[s] = Xw.T @ y
        if q:
            A[s, k * p:] = Xw.T @ W
            A[k * p:, s] = A[s, k * p:].T
    if q:
        Ww = W * wsum[:, None]
        A[k * p:, k * p:] = Ww.T @ W + bundle.prior_precision_phi
        b[k * p:] = Ww.T @ y
    return A, b


def _solve_spd(A, b, what="normal equations"):
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericFailureError(f"{what} are not positive definite: {exc}") from exc
    return linalg.cho_solve(c, b), c


def _effective_theta_precision(bundle):
    return bundle.prior_precision_theta + RIDGE * np.eye(bundle.p)


def _prior_quadratic(params, bundle, lam_theta):
    th = np.atleast_2d(params.theta)
    quad = float(np.einsum("jp,pq,jq->", th, lam_theta, th))
    if bundle.p_phi:
        quad += float(params.phi @ bundle.prior_precision_phi @ params.phi)
    return quad


def log_parameter_prior(params: SegmentParams, bundle: DesignBundle) -> float:
    """Log prior of ``(theta, phi, sigma2)`` up to constants.

    Coefficients are Gaussian with covariance ``sigma2`` times the prior
    covariance and the variance has the improper ``1/sigma2`` prior.
    """
    lam_theta = _effective_theta_precision(bundle)
    k = np.atleast_2d(params.theta).shape[0]
    s2 = params.sigma2
    return (
        -0.5 * bundle.p * k * math.log(s2)
        - _prior_quadratic(params, bundle, lam_theta) / (2.0 * s2)
        - math.log(s2)
    )


def m_step(y, bundle: DesignBundle, marginals, q_weights, sigma2_floor=SIGMA2_FLOOR) -> SegmentParams:
    """Closed-form maximizer of the expected complete-data log posterior.

    ``q_weights[i, j] = E[q_i 1{z_i = j}]`` weights the squared residuals;
    the variance denominator counts ``sum E[1{z}] + p k + 2``.
    """
    k = q_weights.shape[1]
    p = bundle.p
    lam_theta = _effective_theta_precision(bundle)
    A, b = _normal_system(y, bundle, q_weights, lam_theta)
    sol, _ = _solve_spd(A, b, f"M-step normal equations (k={k})")
    theta = sol[: k * p].reshape(k, p)
    phi = sol[k * p:]
    params = SegmentParams(theta, phi, 1.0)
    resid = y[:, None] - segment_means(params, bundle)
    num = float(np.sum(q_weights * resid**2)) + _prior_quadratic(params, bundle, lam_theta)
    den = float(np.sum(marginals)) + p * k + 2.0
    return SegmentParams(theta, phi, max(num / den, sigma2_floor))


def q_function(params: SegmentParams, y, bundle: DesignBundle, marginals, q_weights) -> float:
    """Parameter-dependent part of the EM objective for fixed E-step weights."""
    s2 = params.sigma2
    resid = y[:, None] - segment_means(params, bundle)
    return (
        -0.5 * float(np.sum(marginals)) * math.log(s2)
        - float(np.sum(q_weights * resid**2)) / (2.0 * s2)
        + log_parameter_prior(params, bundle)
    )


def _initial_params(y, bundle, k, sigma2_floor):
    lam_theta = _effective_theta_precision(bundle)
    A, b = _normal_system(y, bundle, np.ones((y.size, 1)), lam_theta)
    sol, _ = _solve_spd(A, b, "initial ridge fit")
    p = bundle.p
    theta0 = sol[:p]
    phi = sol[p:]
    base = SegmentParams(theta0[None, :], phi, 1.0)
    resid = y - segment_means(base, bundle)[:, 0]
    sigma2 = max(float(np.mean(resid**2)), sigma2_floor)
    sd = float(np.std(y))
    theta = np.repeat(theta0[None, :], k, axis=0)
    theta[:, 0] += np.arange(k) * 0.01 * sd
    return SegmentParams(theta, phi, sigma2)


def _e_step(y, grid, bundle, params, robust, log_trans):
    mu = segment_means(params, bundle)
    loglik = robust.logpdf(y[:, None], mu, params.sigma2)
    k = mu.shape[1]
    fb = forward_backward(k, grid, loglik, log_trans)
    q_cond = robust.q_mean(y[:, None] - mu, params.sigma2)
    return fb, fb.marginals * q_cond


def _check_series(y, n_expected=None):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise InvalidInputError("series must be one-dimensional")
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise InvalidInputError(f"non-finite values at rows {bad[:20].tolist()}")
    if n_expected is not None and y.size != n_expected:
        raise InvalidInputError(f"series has {y.size} values for {n_expected} times")
    return y


def em_fit(
    y,
    grid: TimeGrid,
    bundle: DesignBundle,
    k: int,
    robust: RobustConfig = RobustConfig(),
    max_iter: int = 500,
    tol: float = 1e-8,
    log_trans=None,
    init: SegmentParams | None = None,
) -> FitResult:
    """Fit ``k`` segments by EM.

    The trace records the penalized objective (log marginal likelihood plus
    log parameter prior), the quantity each EM step cannot decrease. The
    loop stops when its relative change drops below ``tol``.
    """
    y = _check_series(y, len(grid))
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if y.size <= bundle.p:
        raise InvalidInputError(f"{y.size} observations cannot identify {bundle.p} mean parameters")
    if log_trans is None:
        log_trans = bpp_log_transitions(k, grid.times)
    floor = SIGMA2_FLOOR * max(float(np.var(y)), 1.0)

    params = init if init is not None else _initial_params(y, bundle, k, floor)
    fb, qw = _e_step(y, grid, bundle, params, robust, log_trans)
    obj = fb.log_marginal_likelihood + log_parameter_prior(params, bundle)
    trace = [obj]
    ll_trace = [fb.log_marginal_likelihood]
    warnings = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = m_step(y, bundle, fb.marginals, qw, floor)
        fb_new, qw_new = _e_step(y, grid, bundle, new, robust, log_trans)
        obj_new = fb_new.log_marginal_likelihood + log_parameter_prior(new, bundle)
        if obj_new < obj - MONOTONE_SLACK:
            msg = f"k={k}: objective decreased by {obj - obj_new:.3e} at iteration {it}"
            log.debug(msg)
            warnings.append(msg)
        params, fb, qw = new, fb_new, qw_new
        trace.append(obj_new)
        ll_trace.append(fb.log_marginal_likelihood)
        if abs(obj_new - obj) / max(1.0, abs(obj)) < tol:
            converged = True
            obj = obj_new
            break
        obj = obj_new
    if not converged:
        log.info("EM for k=%d stopped after %d iterations without converging", k, it)
    return FitResult(
        k=k,
        params=params,
        fb=fb,
        q_means=qw,
        trace=trace,
        converged=converged,
        n_iter=it,
        loglik_trace=ll_trace,
        warnings=warnings,
        p=bundle.p,
        p_phi=bundle.p_phi,
        log_det_theta_precision=bundle.log_det_theta_precision(),
    )


# --------------------------------------------------------------------------
# model selection and point estimate

def log_posterior_num_segments(fits: Sequence[FitResult], grid: TimeGrid,
                               variant: str = "noninformative",
                               chain: str = "continuous") -> np.ndarray:
    """Normalized log posterior over ``k = 1..K`` from per-``k`` fits.

    ``log f(y | fit) - (p_k / 2) log(n + 1) + log prior(k)`` with
    ``p_k = k p + p_phi + 1``.
    """
    fits = list(fits)
    if not fits:
        raise InvalidInputError("no fits supplied")
    ks = [f.k for f in fits]
    if ks != list(range(1, len(fits) + 1)):
        raise InvalidInputError(f"fits must cover k = 1..K in order, got {ks}")
    N = len(grid)
    out = np.empty(len(fits))
    for idx, f in enumerate(fits):
        p_k = f.k * f.p + f.p_phi + 1
        out[idx] = (
            f.log_marginal_likelihood
            - 0.5 * p_k * math.log(N)
            + log_prior_num_segments(f.k, grid, f.p, f.log_det_theta_precision, variant, chain)
        )
    return out - logsumexp(out)


def bayes_estimator(marginals_per_k: Sequence[np.ndarray], log_post_k, grid: TimeGrid):
    """Componentwise posterior median path and its change records.

    Minimizes the expected time-weighted Hamming loss
    ``sum_i |z_i - z_i*| (t_i - t_{i-1})``. Ties at 0.5 go to the smaller state.
    """
    weights = np.exp(np.asarray(log_post_k, dtype=float))
    K = max(np.shape(m)[1] for m in marginals_per_k)
    N = len(grid)
    mix = np.zeros((N, K))
    for w, m in zip(weights, marginals_per_k):
        if w == 0.0:
            continue
        m = np.asarray(m, dtype=float)
        mix[:, : m.shape[1]] += w * m
    cdf = np.cumsum(mix, axis=1)
    cdf /= cdf[:, -1:]
    z = 1 + np.sum(cdf < 0.5 - 1e-12, axis=1)
    assert z[0] == 1 and np.all(np.diff(z) >= 0), "posterior median is not a change-point path"
    path = StatePath(z)
    changes = []
    for i in np.flatnonzero(np.diff(z)) + 1:
        for s in range(int(z[i - 1]), int(z[i])):
            changes.append(ChangeRecord(grid.raw_time(i), float(grid.times[i]), s, s + 1, int(i)))
    return path, changes


def detect(y, raw_times, config: RunConfig = RunConfig()) -> DetectionReport:
    """Full pipeline: standardize, fit ``k = 1..K_max``, select, estimate the path."""
    y = np.asarray(y, dtype=float)
    raw = list(raw_times)
    if y.ndim != 1 or y.size != len(raw):
        raise InvalidInputError("values and times must be 1-d and of equal length")
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise InvalidInputError(f"non-finite values at rows {bad[:20].tolist()}")
    order = sorted(range(len(raw)), key=lambda i: raw[i])
    raw = [raw[i] for i in order]
    y = y[order]
    dup = [order[i] for i in range(1, len(raw)) if raw[i] == raw[i - 1]]
    if dup:
        raise InvalidInputError(f"duplicate timestamps at rows {dup[:20]}")
    grid = TimeGrid.from_raw(raw)
    spec = HarmonicSpec.for_grid(grid, config.H, config.trend, config.contrasts)
    bundle = build_design(grid, spec, config.beta_precision, config.psi, config.lam)
    if y.size < bundle.p + 2:
        raise InvalidInputError(f"need at least {bundle.p + 2} observations, got {y.size}")
    robust = RobustConfig(config.nu, config.likelihood)
    K = config.K_max
    if config.chain == "discrete":
        K = min(K, grid.n + 1)
    fits = []
    for k in range(1, K + 1):
        lt = log_transitions(k, grid, config.chain)
        try:
            fits.append(em_fit(y, grid, bundle, k, robust, config.max_iter, config.tol, lt))
        except NumericFailureError as exc:
            raise NumericFailureError(f"k={k}: {exc}") from exc
    log_post = log_posterior_num_segments(fits, grid, config.prior_variant, config.chain)
    map_k = int(np.argmax(log_post)) + 1
    path, changes = bayes_estimator([f.fb.marginals for f in fits], log_post, grid)
    map_fit = fits[map_k - 1]
    one_hot = np.full(map_k, -np.inf)
    one_hot[-1] = 0.0
    map_path, _ = bayes_estimator(
        [np.zeros((len(grid), j)) for j in range(1, map_k)] + [map_fit.fb.marginals],
        one_hot, grid,
    )
    fitted = mean_function(map_fit.params, bundle, map_path)
    return DetectionReport(log_post, map_k, path, changes, fitted, fits, grid, bundle,
                           config, map_path, y)
