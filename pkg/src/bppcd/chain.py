"""Noninformative change-point priors in discrete and continuous time.

The discrete chain places equal mass on every way of choosing ``k - 1`` change
positions among ``n`` steps. Its marginals are hypergeometric and its
transitions follow from the marginals. Relaxed to continuous time, the
marginals become Bernstein polynomials and the transition kernel between two
times ``s < t`` is a Bernstein polynomial in ``(t - s) / (1 - s)``. This is the
Bernstein polynomial process (BPP) used as the prior on state paths.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np
from scipy.special import gammaln

from .errors import InvalidInputError

Number = Union[int, float]
LOG_2PI = math.log(2.0 * math.pi)
DAY = _dt.timedelta(days=1)


# --------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class TimeGrid:
    """Observation times standardized to ``[0, 1)``.

    ``times[i] = raw_days[i] / raw_span_days`` where ``raw_days`` counts days
    from the first observation and ``raw_span_days = (tau_n - tau_0) (n+1)/n``.
    The last time is therefore ``n / (n+1)``, strictly below 1.
    """

    times: np.ndarray
    raw_span_days: float
    raw_origin: Union[float, _dt.date, _dt.datetime] = 0.0
    raw_days: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise InvalidInputError("a time grid needs at least one time")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("time grid contains non-finite values")
        if t[0] != 0.0:
            raise InvalidInputError(f"first standardized time must be 0, got {t[0]!r}")
        if t[-1] >= 1.0:
            raise InvalidInputError("standardized times must stay below 1")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
            raise InvalidInputError(f"times must be strictly increasing (row {bad})")
        if not self.raw_span_days > 0:
            raise InvalidInputError("raw_span_days must be positive")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        rd = t * self.raw_span_days if self.raw_days is None else np.asarray(self.raw_days, float)
        rd.setflags(write=False)
        object.__setattr__(self, "raw_days", rd)

    @property
    def n(self) -> int:
        """Index of the last observation (there are ``n + 1`` times)."""
        return self.times.size - 1

    def __len__(self):
        return self.times.size

    @classmethod
    def from_raw(cls, raw: Sequence) -> "TimeGrid":
        """Standardize raw times given as day counts or as dates/datetimes."""
        raw = list(raw)
        if not raw:
            raise InvalidInputError("no observation times")
        if isinstance(raw[0], (_dt.date, _dt.datetime)):
            origin = raw[0]
            days = np.array([(r - origin) / DAY for r in raw], dtype=float)
        else:
            arr = np.asarray(raw, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("raw times contain non-finite values")
            origin = float(arr[0])
            days = arr - origin
        if days.size > 1 and np.any(np.diff(days) <= 0):
            bad = int(np.flatnonzero(np.diff(days) <= 0)[0]) + 1
            raise InvalidInputError(f"raw times must be strictly increasing (row {bad})")
        n = days.size - 1
        if n == 0:
            return cls(np.zeros(1), 1.0, origin, days)
        span = days[-1] * (n + 1) / n
        times = days / days[-1] * (n / (n + 1))
        return cls(times, float(span), origin, days)

    def to_raw_days(self, t) -> np.ndarray:
        """Days since the origin for standardized time(s) ``t``."""
        return np.asarray(t, dtype=float) * self.raw_span_days

    def to_raw(self, t):
        """Raw time for a standardized time: a date if the origin is a date, else a real."""
        days = float(t) * self.raw_span_days
        if isinstance(self.raw_origin, (_dt.date, _dt.datetime)):
            return self.raw_origin + _dt.timedelta(days=days)
        return self.raw_origin + days

    def raw_time(self, i: int):
        """Raw time of observation ``i`` without round-off from re-scaling."""
        days = float(self.raw_days[i])
        if isinstance(self.raw_origin, (_dt.date, _dt.datetime)):
            return self.raw_origin + _dt.timedelta(days=days)
        return self.raw_origin + days


@dataclass(frozen=True)
class ChainSpec:
    k: int
    K_max: int

    def __post_init__(self):
        if not (1 <= self.k <= self.K_max):
            raise InvalidInputError(f"need 1 <= k <= K_max, got k={self.k}, K_max={self.K_max}")


@dataclass(frozen=True)
class StatePath:
    """Realized 1-based state sequence, one state per grid time."""

    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def validate(self, k: int, n_times: int | None = None) -> "StatePath":
        s = self.states
        if s.ndim != 1 or s.size == 0:
            raise InvalidInputError("state path must be a non-empty 1-d sequence")
        if n_times is not None and s.size != n_times:
            raise InvalidInputError(f"path has {s.size} states for {n_times} times")
        if s[0] != 1:
            raise InvalidInputError(f"path must start in state 1, got {s[0]}")
        if np.any(np.diff(s) < 0):
            raise InvalidInputError("path must be non-decreasing")
        if s.max() > k:
            raise InvalidInputError(f"path visits state {s.max()} > k={k}")
        return self

    def change_indices(self) -> np.ndarray:
        """Indices ``i`` with ``z_i > z_{i-1}``, repeated once per unit of jump."""
        jumps = np.diff(self.states)
        idx = np.flatnonzero(jumps) + 1
        return np.repeat(idx, jumps[idx - 1])


@dataclass(frozen=True)
class SegmentLengths:
    zeta: np.ndarray

    def boundaries(self) -> np.ndarray:
        return np.cumsum(self.zeta)[:-1]

    def states_at(self, times) -> StatePath:
        """1-based states ``j`` with ``sum_{l<j} zeta_l <= t < sum_{l<=j} zeta_l``."""
        t = np.asarray(times, dtype=float)
        return StatePath(np.searchsorted(self.boundaries(), t, side="right") + 1)


# --------------------------------------------------------------------------
# discrete time

def _log_comb(n, r):
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    ok = (r >= 0) & (r <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(r + 1) - gammaln(n - r + 1)
    return np.where(ok, out, -np.inf)


def _check_discrete(n, k, i, j):
    if not (0 <= i <= n and 1 <= j <= k <= n + 1):
        raise InvalidInputError(f"need 0<=i<=n and 1<=j<=k<=n+1, got n={n}, k={k}, i={i}, j={j}")


def discrete_marginal(n: int, k: int, i: int, j: int, exact: bool = False):
    """Prior probability that the discrete chain is in state ``j`` at step ``i``.

    Hypergeometric: ``C(n-i, k-j) C(i, j-1) / C(n, k-1)``. With ``exact=True``
    the value is returned as a :class:`fractions.Fraction`.
    """
    _check_discrete(n, k, i, j)
    if exact:
        if j - 1 > i or k - j > n - i:
            return Fraction(0)
        return Fraction(math.comb(n - i, k - j) * math.comb(i, j - 1), math.comb(n, k - 1))
    if j - 1 > i or k - j > n - i:
        return 0.0
    return float(np.exp(_log_comb(n - i, k - j) + _log_comb(i, j - 1) - _log_comb(n, k - 1)))


def discrete_transition(n: int, k: int, i: int, j: int, exact: bool = False):
    """Probability of staying in state ``j`` from step ``i-1`` to ``i``.

    Built from the marginals; the advance probability is one minus this value.
    """
    if not (1 <= i <= n and 1 <= j <= k <= n + 1):
        raise InvalidInputError(f"need 1<=i<=n and 1<=j<=k<=n+1, got n={n}, k={k}, i={i}, j={j}")
    prev = discrete_marginal(n, k, i - 1, j, exact)
    if prev == 0:
        raise InvalidInputError(f"state {j} has zero prior probability at step {i - 1}")
    if j == k:
        return Fraction(1) if exact else 1.0
    now_cum = sum(discrete_marginal(n, k, i, l, exact) for l in range(1, j + 1))
    prev_cum = sum(discrete_marginal(n, k, i - 1, l, exact) for l in range(1, j))
    p = (now_cum - prev_cum) / prev
    if exact:
        return p
    return min(max(p, 0.0), 1.0)


def discrete_log_transitions(n: int, k: int) -> np.ndarray:
    """Log transition tensor ``(n, k, k)`` of the discrete chain on index positions.

    Uses the closed form of the self-transition, ``(n-i+1-(k-j)) / (n-i+1)``:
    of the ``n-i+1`` positions left, ``k-j`` must still hold a change. Only
    ``j -> j`` and ``j -> j+1`` have mass. Unreachable states get a self-loop.
    """
    if k - 1 > n:
        raise InvalidInputError(f"k-1={k - 1} changes do not fit in n={n} steps")
    out = np.full((n, k, k), -np.inf)
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, k + 1)[None, :]
    remaining = n - i + 1
    need = k - j
    with np.errstate(divide="ignore", invalid="ignore"):
        stay = (remaining - need) / remaining
    reachable = need <= remaining
    stay = np.where(reachable, np.clip(stay, 0.0, 1.0), 1.0)
    stay[:, -1] = 1.0
    with np.errstate(divide="ignore"):
        log_stay = np.log(stay)
        log_move = np.log1p(-stay)
    jj = np.arange(k)
    out[:, jj, jj] = log_stay
    out[:, jj[:-1], jj[:-1] + 1] = log_move[:, :-1]
    return out


def sample_discrete_changepoints(n: int, k: int, rng: np.random.Generator) -> list[int]:
    """Uniformly distributed set of ``k-1`` change positions in ``1..n``.

    Drawn as consecutive inverse-hypergeometric lengths until success: with
    population ``m`` and ``J`` successes left, the next length ``i`` has mass
    ``J / (m - i + 1) * C(m - J, i - 1) / C(m, i - 1)``.
    """
    if k < 1 or k - 1 > n:
        raise InvalidInputError(f"cannot place k-1={k - 1} changes among n={n} positions")
    out = []
    pos = 0
    for l in range(1, k):
        m = n - pos
        succ = k - l
        lengths = np.arange(1, m - succ + 2)
        logp = ihg_first_log_pmf(lengths, m, succ)
        p = np.exp(logp - logp.max())
        zeta = int(rng.choice(lengths, p=p / p.sum()))
        pos += zeta
        out.append(pos)
    return out


def ihg_first_log_pmf(i, population: int, successes: int) -> np.ndarray:
    """Log pmf of the number of draws until the first success (inverse hypergeometric)."""
    i = np.asarray(i, dtype=float)
    m, J = population, successes
    with np.errstate(divide="ignore"):
        return (
            np.log(J)
            - np.log(m - (i - 1))
            + _log_comb(m - J, i - 1)
            - _log_comb(m, i - 1)
        )


# --------------------------------------------------------------------------
# continuous time

def bernstein_marginal(k: int, t: float, j: int) -> float:
    """Prior probability of state ``j`` at standardized time ``t``: ``b_{j-1,k-1}(t)``."""
    if not (0.0 <= t <= 1.0 and 1 <= j <= k):
        raise InvalidInputError(f"need t in [0,1] and 1<=j<=k, got t={t}, j={j}, k={k}")
    return float(np.exp(_log_bernstein(j - 1, k - 1, t)))


def _log_bernstein(nu, deg, x):
    """log of ``C(deg, nu) x^nu (1-x)^(deg-nu)`` with ``0^0 = 1``."""
    nu = np.asarray(nu, dtype=float)
    deg = np.asarray(deg, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(nu > 0, nu * np.log(x), 0.0)
        b = np.where(deg - nu > 0, (deg - nu) * np.log1p(-x), 0.0)
    return _log_comb(deg, nu) + a + b


def continuous_transition(k: int, s: float, t: float, j: int, h: int) -> float:
    """``P(z_t = h | z_s = j)`` under the BPP: ``b_{h-j, k-j}((t - s) / (1 - s))``."""
    if not (1 <= j <= k and 1 <= h <= k):
        raise InvalidInputError(f"states out of range: j={j}, h={h}, k={k}")
    if not (0.0 <= s < t <= 1.0):
        raise InvalidInputError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    if h < j:
        return 0.0
    x = (t - s) / (1.0 - s)
    return float(np.exp(_log_bernstein(h - j, k - j, x)))


def log_transition_matrix(k: int, s: float, t: float) -> np.ndarray:
    """``(k, k)`` matrix of log BPP transitions from time ``s`` to ``t``."""
    return bpp_log_transitions(k, np.array([s, t]))[0]


def bpp_log_transitions(k: int, times) -> np.ndarray:
    """Log BPP transition tensor ``(n, k, k)`` between consecutive ``times``."""
    t = np.asarray(times, dtype=float)
    if t.size > 1 and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > 1.0):
        raise InvalidInputError("times must be increasing within [0, 1] with s < 1")
    x = (t[1:] - t[:-1]) / (1.0 - t[:-1])
    j = np.arange(k)[:, None]
    h = np.arange(k)[None, :]
    nu = np.clip(h - j, 0, None)
    deg = k - 1 - j
    out = _log_bernstein(nu[None], deg[None], x[:, None, None])
    out[:, h < j] = -np.inf
    return out


def log_bpp_prior(spec: ChainSpec, grid: TimeGrid, path: StatePath) -> float:
    """Log prior probability of a state path under the BPP."""
    path.validate(spec.k, len(grid))
    if spec.k == 1:
        return 0.0
    lt = bpp_log_transitions(spec.k, grid.times)
    z = path.states - 1
    return float(np.sum(lt[np.arange(grid.n), z[:-1], z[1:]]))


def log_prior_num_segments(
    k: int,
    grid: TimeGrid,
    p: int,
    log_det_prior_precision: float = 0.0,
    variant: str = "noninformative",
    chain: str = "continuous",
) -> float:
    """Unnormalized log prior on the number of segments.

    ``noninformative`` weights each ``k`` inversely to the volume of its path
    and parameter space; ``equal_volume`` is the reciprocal. For the
    continuous chain the path volume factor is
    ``prod_i ((1 - t_i) / (1 - t_{i-1}))^k = (1 - t_n)^k``; for the discrete
    chain it is ``1 / C(n, k-1)``.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if variant not in ("noninformative", "equal_volume"):
        raise InvalidInputError(f"unknown prior variant {variant!r}")
    t = grid.times
    if t[-1] >= 1.0:
        raise InvalidInputError("grid reaches t=1; the volume factor degenerates")
    if chain == "continuous":
        log_path = k * float(np.sum(np.log1p(-t[1:]) - np.log1p(-t[:-1])))
    elif chain == "discrete":
        log_path = -float(_log_comb(grid.n, k - 1))
    else:
        raise InvalidInputError(f"unknown chain {chain!r}")
    val = -0.5 * p * k * LOG_2PI + 0.5 * k * log_det_prior_precision + log_path
    return val if variant == "noninformative" else -val


def sample_segment_lengths(k: int, rng: np.random.Generator) -> SegmentLengths:
    """Dirichlet(1_k) segment lengths as normalized standard exponentials."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    e = rng.standard_exponential(k)
    return SegmentLengths(e / e.sum())


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and a spawn path ``keys``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(x) for x in keys))
    return np.random.Generator(np.random.Philox(ss))
