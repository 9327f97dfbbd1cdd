"""Gibbs sampler for a fixed number of segments.

Each sweep updates the state path, the latent precision scales, the stacked
coefficients and the shared variance, in that order. The path is drawn
exactly by forward filtering and backward sampling through the chain.
Every sampler accepts an optional ``size`` to draw many values from the same
conditional at once, which is how the tests check them against their
analytic moments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from . import kernels
from .chain import StatePath, TimeGrid, bpp_log_transitions, make_rng
from .errors import InvalidInputError, NumericFailureError
from .inference import (
    _effective_theta_precision,
    _normal_system,
    _prior_quadratic,
    em_fit,
)
from .model import (
    DesignBundle,
    RobustConfig,
    SegmentParams,
    gaussian_logpdf,
    segment_means,
)

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class GibbsState:
    params: SegmentParams
    q: np.ndarray
    path: StatePath
    iteration: int = 0

    @property
    def k(self) -> int:
        return np.atleast_2d(self.params.theta).shape[0]


@dataclass
class GibbsTrace:
    iterations: np.ndarray
    sigma2: np.ndarray
    theta: np.ndarray   # (D, k, p)
    phi: np.ndarray     # (D, p_phi)
    q: np.ndarray       # (D, n+1)
    paths: np.ndarray   # (D, n+1), 1-based
    log_joint: np.ndarray

    def __len__(self):
        return self.iterations.size

    def state_marginals(self, k: int) -> np.ndarray:
        """Empirical ``(n+1, k)`` state frequencies over kept draws."""
        out = np.zeros((self.paths.shape[1], k))
        for j in range(k):
            out[:, j] = np.mean(self.paths == j + 1, axis=0)
        return out

    def change_indices(self, draw: int) -> np.ndarray:
        return StatePath(self.paths[draw]).change_indices()

    def to_csv(self, path, grid: TimeGrid) -> None:
        """One row per kept draw: iteration, variance, flattened coefficients, change times."""
        D, k, p = self.theta.shape
        header = ["iteration", "sigma2", "log_joint"]
        header += [f"theta_{j + 1}_{c}" for j in range(k) for c in range(p)]
        header += [f"phi_{c}" for c in range(self.phi.shape[1])]
        header += ["change_times", "final_state"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for d in range(D):
                ch = ";".join(repr(float(grid.times[i])) for i in self.change_indices(d))
                w.writerow(
                    [int(self.iterations[d]), repr(float(self.sigma2[d])), repr(float(self.log_joint[d]))]
                    + [repr(float(v)) for v in self.theta[d].ravel()]
                    + [repr(float(v)) for v in self.phi[d]]
                    + [ch, int(self.paths[d, -1])]
                )


def _residuals(state: GibbsState, y, bundle) -> np.ndarray:
    mu = segment_means(state.params, bundle)
    z = state.path.states - 1
    return y - mu[np.arange(y.size), z]


def _maybe_squeeze(draws, size):
    return draws[0] if size is None else draws


def sample_path(state: GibbsState, y, bundle: DesignBundle, grid: TimeGrid,
                rng: np.random.Generator, size=None, log_trans=None):
    """Draw the state path from its full conditional.

    Observation ``i`` is Gaussian with variance ``sigma2 / q_i`` given its state.
    Returns a :class:`StatePath`, or an ``(size, n+1)`` array of 1-based states.
    """
    k = state.k
    mu = segment_means(state.params, bundle)
    var = state.params.sigma2 / np.asarray(state.q, dtype=float)
    loglik = np.ascontiguousarray(gaussian_logpdf(y[:, None], mu, var[:, None]))
    if log_trans is None:
        log_trans = bpp_log_transitions(k, grid.times)
    la = kernels.forward(loglik, np.ascontiguousarray(log_trans))
    if not np.any(np.isfinite(la[-1])):
        raise NumericFailureError(f"path filter lost all mass (k={k})")
    D = 1 if size is None else int(size)
    u = rng.random((D, y.size))
    paths = kernels.backward_sample(la, np.ascontiguousarray(log_trans), u) + 1
    if size is None:
        return StatePath(paths[0])
    return paths


def sample_q(state: GibbsState, y, bundle: DesignBundle, nu: float,
             rng: np.random.Generator, size=None):
    """Independent Gamma((nu+1)/2, nu/2 + r^2/(2 sigma2)) precision scales."""
    r = _residuals(state, y, bundle)
    shape = 0.5 * (nu + 1.0)
    rate = 0.5 * nu + r * r / (2.0 * state.params.sigma2)
    D = 1 if size is None else int(size)
    draws = rng.standard_gamma(shape, size=(D, r.size)) / rate
    return _maybe_squeeze(draws, size)


def theta_phi_conditional(state: GibbsState, y, bundle: DesignBundle):
    """Mean and Cholesky factor of the stacked-coefficient conditional precision (over sigma2)."""
    k = state.k
    z = state.path.states - 1
    weights = np.zeros((y.size, k))
    weights[np.arange(y.size), z] = state.q
    A, b = _normal_system(y, bundle, weights, _effective_theta_precision(bundle))
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericFailureError(f"coefficient precision is not positive definite: {exc}") from exc
    mean = linalg.cho_solve((L, True), b)
    return mean, L


def sample_theta_phi(state: GibbsState, y, bundle: DesignBundle,
                     rng: np.random.Generator, size=None):
    """Joint Gaussian draw of ``(theta_1..theta_k, phi)``.

    Returns ``(theta, phi)``; with ``size`` the arrays gain a leading draw axis.
    """
    mean, L = theta_phi_conditional(state, y, bundle)
    D = 1 if size is None else int(size)
    xi = rng.standard_normal((mean.size, D))
    dev = linalg.solve_triangular(L, xi, lower=True, trans="T")
    draws = (mean[:, None] + math.sqrt(state.params.sigma2) * dev).T
    k, p = state.k, bundle.p
    theta = draws[:, : k * p].reshape(D, k, p)
    phi = draws[:, k * p:]
    return _maybe_squeeze(theta, size), _maybe_squeeze(phi, size)


def sigma2_conditional(state: GibbsState, y, bundle: DesignBundle):
    """Degrees of freedom and scale ``(nu0, tau0^2)`` of the scaled-inverse-chi^2 conditional."""
    r = _residuals(state, y, bundle)
    k, p = state.k, bundle.p
    quad = _prior_quadratic(state.params, bundle, _effective_theta_precision(bundle))
    nu0 = y.size + p * k
    tau2 = (float(np.sum(state.q * r * r)) + quad) / nu0
    return nu0, tau2


def sample_sigma2(state: GibbsState, y, bundle: DesignBundle,
                  rng: np.random.Generator, size=None):
    """Scaled-inverse-chi^2 draw as ``nu0 tau0^2 / chi^2(nu0)``, floored at 1e-12."""
    nu0, tau2 = sigma2_conditional(state, y, bundle)
    D = 1 if size is None else int(size)
    draws = np.maximum(nu0 * tau2 / rng.chisquare(nu0, size=D), SIGMA2_FLOOR)
    return float(draws[0]) if size is None else draws


def log_joint(state: GibbsState, y, bundle: DesignBundle, grid: TimeGrid,
              robust: RobustConfig, log_trans) -> float:
    """Log joint density of data and all latent quantities, up to a constant."""
    s2 = state.params.sigma2
    r = _residuals(state, y, bundle)
    q = np.asarray(state.q, dtype=float)
    out = float(np.sum(gaussian_logpdf(r, 0.0, s2 / q)))
    if robust.robust:
        a = 0.5 * robust.nu
        out += float(np.sum(a * math.log(a) - gammaln(a) + (a - 1) * np.log(q) - a * q))
    k = state.k
    quad = _prior_quadratic(state.params, bundle, _effective_theta_precision(bundle))
    out += -0.5 * bundle.p * k * math.log(s2) - quad / (2 * s2) - math.log(s2)
    z = state.path.states - 1
    if k > 1:
        out += float(np.sum(log_trans[np.arange(grid.n), z[:-1], z[1:]]))
    return out


def gibbs_run(y, grid: TimeGrid, bundle: DesignBundle, k: int,
              robust: RobustConfig = RobustConfig(), iters: int = 2000,
              burnin: int = 500, thin: int = 2, seed: int = 0,
              init: GibbsState | None = None, log_trans=None) -> GibbsTrace:
    """Systematic-scan Gibbs chain (path, scales, coefficients, variance).

    Starts from the EM fit unless ``init`` is given. Deterministic given ``seed``.
    """
    y = np.asarray(y, dtype=float)
    if y.size != len(grid):
        raise InvalidInputError(f"series has {y.size} values for {len(grid)} times")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("series contains non-finite values")
    if not (iters >= 1 and 0 <= burnin < iters and thin >= 1):
        raise InvalidInputError("need iters >= 1, 0 <= burnin < iters and thin >= 1")
    if log_trans is None:
        log_trans = bpp_log_transitions(k, grid.times)
    rng = make_rng(seed)
    if init is None:
        fit = em_fit(y, grid, bundle, k, robust, log_trans=log_trans)
        cdf = np.cumsum(fit.fb.marginals, axis=1)
        path = StatePath(1 + np.sum(cdf < 0.5 - 1e-12, axis=1))
        state = GibbsState(fit.params, np.ones(y.size), path, 0)
        if robust.robust:
            state = replace(state, q=robust.q_mean(_residuals(state, y, bundle), fit.params.sigma2))
    else:
        state = init
    state.path.validate(k, y.size)

    kept = []
    for it in range(1, iters + 1):
        path = sample_path(state, y, bundle, grid, rng, log_trans=log_trans)
        state = replace(state, path=path)
        if robust.robust:
            state = replace(state, q=sample_q(state, y, bundle, robust.nu, rng))
        theta, phi = sample_theta_phi(state, y, bundle, rng)
        state = replace(state, params=SegmentParams(theta, phi, state.params.sigma2))
        s2 = sample_sigma2(state, y, bundle, rng)
        state = GibbsState(SegmentParams(theta, phi, s2), state.q, state.path, it)
        if it > burnin and (it - burnin) % thin == 0:
            kept.append((state, log_joint(state, y, bundle, grid, robust, log_trans)))

    D = len(kept)
    p_phi = bundle.p_phi
    return GibbsTrace(
        iterations=np.array([s.iteration for s, _ in kept], dtype=np.int64),
        sigma2=np.array([s.params.sigma2 for s, _ in kept]),
        theta=np.array([s.params.theta for s, _ in kept]).reshape(D, k, bundle.p),
        phi=np.array([s.params.phi for s, _ in kept]).reshape(D, p_phi),
        q=np.array([s.q for s, _ in kept]).reshape(D, y.size),
        paths=np.array([s.path.states for s, _ in kept], dtype=np.int64).reshape(D, y.size),
        log_joint=np.array([lj for _, lj in kept]),
    )
