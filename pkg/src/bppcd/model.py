"""Mean-function designs and the robust likelihood.

The mean at standardized time ``t`` in segment ``j`` is
``x_t' theta_j + w_t' phi`` where ``x_t = [1, t, sin(h w t), cos(h w t)]_{h<=H}``
and ``w_t`` holds per-year harmonic contrasts. Contrast columns are written in
a reduced basis that vanishes, together with its time derivative, at every
year boundary, so the fitted mean stays C^1 across years:

    sin column (h, l):  sin(h w t) - (h / H) sin(H w t)
    cos column (h, l):  cos(h w t) -          cos(H w t)

for ``h = 1 .. H-1`` inside year ``l`` and zero elsewhere. The H-th harmonic
coefficients of the full parameterization are implied by
``delta_H = -sum_h delta_h`` and ``gamma_H = -sum_h (h / H) gamma_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .chain import StatePath, TimeGrid
from .errors import InvalidInputError

DAYS_PER_YEAR = 365.0


@dataclass(frozen=True)
class HarmonicSpec:
    """Harmonic regression layout.

    ``H = 0`` gives an intercept (plus optional trend) model, which is what
    the synthetic benchmark uses.
    """

    H: int
    span_days: float
    with_trend: bool = True
    with_contrasts: bool = True
    years: int = 1

    def __post_init__(self):
        if self.H < 0:
            raise InvalidInputError("H must be >= 0")
        if self.with_contrasts and self.H < 2:
            raise InvalidInputError("interannual contrasts need H >= 2")
        if not self.span_days > 0:
            raise InvalidInputError("span_days must be positive")
        if self.years < 1:
            raise InvalidInputError("years must be >= 1")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.span_days / DAYS_PER_YEAR

    @property
    def p(self) -> int:
        return 1 + int(self.with_trend) + 2 * self.H

    @property
    def p_phi(self) -> int:
        return 2 * (self.H - 1) * self.years if self.with_contrasts else 0

    @classmethod
    def for_grid(cls, grid: TimeGrid, H: int = 2, with_trend: bool = True,
                 with_contrasts: bool = True) -> "HarmonicSpec":
        years = int(year_index(grid.raw_days).max()) + 1
        return cls(H, grid.raw_span_days, with_trend, with_contrasts, years)


@dataclass(frozen=True)
class DesignBundle:
    X: np.ndarray
    W: np.ndarray
    prior_precision_theta: np.ndarray
    prior_precision_phi: np.ndarray
    spec: HarmonicSpec
    year: np.ndarray

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def p_phi(self) -> int:
        return self.W.shape[1]

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    def log_det_theta_precision(self) -> float:
        """Log pseudo-determinant of the theta prior precision (flat directions skipped)."""
        d = np.diag(self.prior_precision_theta)
        return float(np.sum(np.log(d[d > 0])))


class SegmentParams(NamedTuple):
    theta: np.ndarray  # (k, p)
    phi: np.ndarray    # (p_phi,)
    sigma2: float


class QPosterior(NamedTuple):
    shape: np.ndarray
    rate: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True)
class RobustConfig:
    nu: float = 3.0
    mode: str = "robust_t"

    def __post_init__(self):
        if self.mode not in ("robust_t", "gaussian"):
            raise InvalidInputError(f"unknown likelihood mode {self.mode!r}")
        if self.mode == "robust_t" and not self.nu > 0:
            raise InvalidInputError("nu must be positive")

    @property
    def robust(self) -> bool:
        return self.mode == "robust_t"

    def logpdf(self, y, mu, sigma2):
        if self.robust:
            return lst_logpdf(y, mu, sigma2, self.nu)
        return gaussian_logpdf(y, mu, sigma2)

    def q_mean(self, residual, sigma2):
        if self.robust:
            return q_posterior(residual, sigma2, self.nu).mean
        return np.ones_like(np.asarray(residual, dtype=float))


# --------------------------------------------------------------------------
# designs

def year_index(raw_days) -> np.ndarray:
    """Zero-based 365-day year counted from the first observation."""
    return np.floor(np.asarray(raw_days, dtype=float) / DAYS_PER_YEAR).astype(np.int64)


def mean_rows(t, spec: HarmonicSpec, derivative: bool = False) -> np.ndarray:
    """Rows of the mean design (or its time derivative) at standardized times."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = spec.omega
    cols = [np.zeros_like(t) if derivative else np.ones_like(t)]
    if spec.with_trend:
        cols.append(np.ones_like(t) if derivative else t)
    for h in range(1, spec.H + 1):
        a = h * w * t
        if derivative:
            cols += [h * w * np.cos(a), -h * w * np.sin(a)]
        else:
            cols += [np.sin(a), np.cos(a)]
    return np.column_stack(cols)


def contrast_rows(t, year, spec: HarmonicSpec, derivative: bool = False) -> np.ndarray:
    """Rows of the reduced contrast design for times ``t`` assigned to ``year``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    year = np.broadcast_to(np.asarray(year, dtype=np.int64), t.shape)
    H, w = spec.H, spec.omega
    if not spec.with_contrasts:
        return np.zeros((t.size, 0))
    if np.any((year < 0) | (year >= spec.years)):
        raise InvalidInputError("year index outside the contrast design")
    m = H - 1
    local = np.empty((t.size, 2 * m))
    aH = H * w * t
    for h in range(1, H):
        a = h * w * t
        if derivative:
            local[:, h - 1] = h * w * (np.cos(a) - np.cos(aH))
            local[:, m + h - 1] = -h * w * np.sin(a) + H * w * np.sin(aH)
        else:
            local[:, h - 1] = np.sin(a) - (h / H) * np.sin(aH)
            local[:, m + h - 1] = np.cos(a) - np.cos(aH)
    out = np.zeros((t.size, 2 * m * spec.years))
    rows = np.arange(t.size)[:, None]
    cols = year[:, None] * 2 * m + np.arange(2 * m)[None, :]
    out[rows, cols] = local
    return out


def build_design(grid: TimeGrid, spec: HarmonicSpec, beta_precision: float = 5.0,
                 psi: float = 1.0, lam: float = 1.0) -> DesignBundle:
    """Mean design, reduced contrast design and block prior precisions for a grid."""
    year = year_index(grid.raw_days)
    if spec.with_contrasts and year.max() >= spec.years:
        raise InvalidInputError("grid spans more years than the harmonic spec")
    X = mean_rows(grid.times, spec)
    W = contrast_rows(grid.times, year, spec)
    lam_theta = np.zeros(spec.p)
    if spec.with_trend:
        lam_theta[1] = beta_precision
    if spec.with_contrasts:
        _, prec_phi = contrast_prior_covariance(spec.H, psi, lam, spec.years)
    else:
        prec_phi = np.zeros((0, 0))
    for a in (X, W, prec_phi):
        a.setflags(write=False)
    return DesignBundle(X, W, np.diag(lam_theta), prec_phi, spec, year)


def expand_contrasts(phi, H: int, years: int):
    """Full per-year contrast coefficients ``(gamma, delta)``, each ``(years, H)``."""
    phi = np.asarray(phi, dtype=float).reshape(years, 2, H - 1)
    h = np.arange(1, H)
    gamma = np.empty((years, H))
    delta = np.empty((years, H))
    gamma[:, :-1] = phi[:, 0]
    delta[:, :-1] = phi[:, 1]
    gamma[:, -1] = -(phi[:, 0] * (h / H)).sum(axis=1)
    delta[:, -1] = -phi[:, 1].sum(axis=1)
    return gamma, delta


def conditional_harmonic_covariance(H: int, psi: float = 1.0, lam: float = 1.0,
                                    weights=None) -> np.ndarray:
    """Covariance of the first ``H-1`` harmonic contrasts given ``weights' c = 0``.

    The unconstrained contrasts are ``N(0, psi diag(exp(lam (1 - h))))``.
    ``weights`` defaults to all ones (the value constraint on cosines).
    """
    if H < 2:
        raise InvalidInputError("need H >= 2")
    if not psi > 0:
        raise InvalidInputError("psi must be positive")
    a = np.ones(H) if weights is None else np.asarray(weights, dtype=float)
    phi_c = np.diag(psi * np.exp(lam * (1.0 - np.arange(1, H + 1))))
    v = phi_c @ a
    s = float(a @ v)
    if not s > 0 or not np.isfinite(s):
        raise InvalidInputError("constraint variance is singular")
    cond = phi_c - np.outer(v, v) / s
    return cond[: H - 1, : H - 1]


def contrast_prior_covariance(H: int, psi: float = 1.0, lam: float = 1.0, years: int = 1):
    """Block-diagonal contrast prior ``(covariance, precision)`` over years.

    Each year carries a sine block (constraint weights ``h / H``) followed by a
    cosine block (unit weights), matching the column order of the contrast design.
    """
    sin_block = conditional_harmonic_covariance(H, psi, lam, np.arange(1, H + 1) / H)
    cos_block = conditional_harmonic_covariance(H, psi, lam)
    m = H - 1
    cov = np.zeros((2 * m * years, 2 * m * years))
    prec = np.zeros_like(cov)
    sin_inv = np.linalg.inv(sin_block)
    cos_inv = np.linalg.inv(cos_block)
    for l in range(years):
        o = 2 * m * l
        cov[o:o + m, o:o + m] = sin_block
        cov[o + m:o + 2 * m, o + m:o + 2 * m] = cos_block
        prec[o:o + m, o:o + m] = sin_inv
        prec[o + m:o + 2 * m, o + m:o + 2 * m] = cos_inv
    return cov, prec


# --------------------------------------------------------------------------
# likelihood

def lst_logpdf(y, mu, sigma2, nu):
    """Log density of the location-scale t with location ``mu``, scale^2 ``sigma2``, ``nu`` dof."""
    y = np.asarray(y, dtype=float)
    z2 = (y - mu) ** 2 / sigma2
    return (
        gammaln(0.5 * (nu + 1.0))
        - gammaln(0.5 * nu)
        - 0.5 * np.log(np.pi * nu * sigma2)
        - 0.5 * (nu + 1.0) * np.log1p(z2 / nu)
    )


def gaussian_logpdf(y, mu, sigma2):
    y = np.asarray(y, dtype=float)
    return -0.5 * (np.log(2.0 * np.pi * sigma2) + (y - mu) ** 2 / sigma2)


def q_posterior(residual, sigma2, nu) -> QPosterior:
    """Gamma posterior (shape, rate) of the latent precision scale and its mean."""
    r = np.asarray(residual, dtype=float)
    shape = np.full_like(r, 0.5 * (nu + 1.0))
    rate = 0.5 * nu + r * r / (2.0 * sigma2)
    return QPosterior(shape, rate, shape / rate)


# --------------------------------------------------------------------------
# mean function

def segment_means(params: SegmentParams, bundle: DesignBundle) -> np.ndarray:
    """``(n+1, k)`` matrix of means, column ``j`` using ``theta_j``."""
    base = bundle.X @ np.atleast_2d(params.theta).T
    if bundle.p_phi:
        base = base + (bundle.W @ params.phi)[:, None]
    return base


def mean_function(params: SegmentParams, bundle: DesignBundle, state_path: StatePath) -> np.ndarray:
    """Fitted values ``x_t' theta_{z_t} + w_t' phi`` along a state path."""
    z = np.asarray(state_path.states)
    theta = np.atleast_2d(params.theta)
    if z.size != bundle.n_obs:
        raise InvalidInputError("path length does not match the design")
    if z.min() < 1 or z.max() > theta.shape[0]:
        raise InvalidInputError(f"path uses state {z.max()} but only {theta.shape[0]} segments exist")
    out = np.einsum("ip,ip->i", bundle.X, theta[z - 1])
    if bundle.p_phi:
        out = out + bundle.W @ params.phi
    return out
