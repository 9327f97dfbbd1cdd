"""Hot loops of the change-point chain: log-space forward/backward sweeps and
backward path sampling.

Every kernel exists twice: an explicit-loop version compiled with numba, and a
vectorized numpy version used when numba is unavailable or disabled through
``BPPCD_DISABLE_NUMBA``. Both take the same arguments:

    loglik     (N, k)       log f(y_i | z_i = j)
    log_trans  (N-1, k, k)  log P(z_{i+1} = h | z_i = j), -inf below the diagonal

States are 0-based here; the public API is 1-based.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, jit

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# explicit loops (numba targets)

def _forward_loops(loglik, log_trans):
    N, k = loglik.shape
    la = np.full((N, k), -np.inf)
    la[0, 0] = loglik[0, 0]
    for i in range(1, N):
        for h in range(k):
            m = -np.inf
            for j in range(h + 1):
                v = la[i - 1, j] + log_trans[i - 1, j, h]
                if v > m:
                    m = v
            if m == -np.inf:
                continue
            s = 0.0
            for j in range(h + 1):
                s += np.exp(la[i - 1, j] + log_trans[i - 1, j, h] - m)
            la[i, h] = loglik[i, h] + m + np.log(s)
    return la


def _backward_loops(loglik, log_trans):
    N, k = loglik.shape
    lb = np.zeros((N, k))
    for i in range(N - 2, -1, -1):
        for j in range(k):
            m = -np.inf
            for h in range(j, k):
                v = log_trans[i, j, h] + loglik[i + 1, h] + lb[i + 1, h]
                if v > m:
                    m = v
            if m == -np.inf:
                lb[i, j] = -np.inf
                continue
            s = 0.0
            for h in range(j, k):
                s += np.exp(log_trans[i, j, h] + loglik[i + 1, h] + lb[i + 1, h] - m)
            lb[i, j] = m + np.log(s)
    return lb


def _draw_impl(logw, n, u):
    # categorical draw over logw[:n] with one uniform
    m = -np.inf
    for j in range(n):
        if logw[j] > m:
            m = logw[j]
    total = 0.0
    for j in range(n):
        total += np.exp(logw[j] - m)
    target = u * total
    acc = 0.0
    last = 0
    for j in range(n):
        w = np.exp(logw[j] - m)
        if w > 0.0:
            last = j
        acc += w
        if acc > target:
            return j
    return last


# compiled samplers resolve this global at compile time
_draw = jit(_draw_impl) or _draw_impl


def _backward_sample_loops(log_filter, log_trans, u):
    D, N = u.shape
    k = log_filter.shape[1]
    paths = np.zeros((D, N), dtype=np.int64)
    logw = np.empty(k)
    for d in range(D):
        for j in range(k):
            logw[j] = log_filter[N - 1, j]
        z = _draw(logw, k, u[d, N - 1])
        paths[d, N - 1] = z
        for i in range(N - 2, -1, -1):
            for j in range(z + 1):
                logw[j] = log_filter[i, j] + log_trans[i, j, z]
            z = _draw(logw, z + 1, u[d, i])
            paths[d, i] = z
    return paths


forward_numba = jit(_forward_loops)
backward_numba = jit(_backward_loops)
backward_sample_numba = jit(_backward_sample_loops)


# --------------------------------------------------------------------------
# vectorized numpy fallback

def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    finite = np.isfinite(m)
    safe = np.where(finite, m, 0.0)
    with np.errstate(under="ignore"):
        s = np.sum(np.exp(a - safe), axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.where(finite, safe + np.log(s), -np.inf)
    return np.squeeze(out, axis=axis)


def forward_numpy(loglik, log_trans):
    N, k = loglik.shape
    la = np.full((N, k), -np.inf)
    la[0, 0] = loglik[0, 0]
    for i in range(1, N):
        la[i] = loglik[i] + _lse(la[i - 1][:, None] + log_trans[i - 1], axis=0)
    return la


def backward_numpy(loglik, log_trans):
    N, k = loglik.shape
    lb = np.zeros((N, k))
    for i in range(N - 2, -1, -1):
        lb[i] = _lse(log_trans[i] + (loglik[i + 1] + lb[i + 1])[None, :], axis=1)
    return lb


def _draw_rows(logw, u):
    m = np.max(logw, axis=1, keepdims=True)
    w = np.exp(logw - m)
    cdf = np.cumsum(w, axis=1)
    target = (u * cdf[:, -1])[:, None]
    idx = np.argmax(cdf > target, axis=1)
    # u == 1 edge: fall back to the last positive-weight state
    none = ~np.any(cdf > target, axis=1)
    if np.any(none):
        last = w.shape[1] - 1 - np.argmax((w > 0)[:, ::-1], axis=1)
        idx = np.where(none, last, idx)
    return idx


def backward_sample_numpy(log_filter, log_trans, u):
    D, N = u.shape
    paths = np.zeros((D, N), dtype=np.int64)
    z = _draw_rows(np.broadcast_to(log_filter[N - 1], (D, log_filter.shape[1])), u[:, N - 1])
    paths[:, N - 1] = z
    for i in range(N - 2, -1, -1):
        # log_trans[i][:, z] -> (k, D); rows over the next state
        logw = log_filter[i][None, :] + log_trans[i][:, z].T
        z = _draw_rows(logw, u[:, i])
        paths[:, i] = z
    return paths


if NUMBA_ENABLED:
    forward = forward_numba
    backward = backward_numba
    backward_sample = backward_sample_numba
else:
    forward = forward_numpy
    backward = backward_numpy
    backward_sample = backward_sample_numpy


def pairwise_log(log_alpha, log_beta, loglik, log_trans, log_z):
    """Log posterior of consecutive state pairs, shape (N-1, k, k)."""
    return (
        log_alpha[:-1, :, None]
        + log_trans
        + (loglik[1:] + log_beta[1:])[:, None, :]
        - log_z
    )
