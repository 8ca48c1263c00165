"""Hot numeric kernels with a numba path and a pure numpy/scipy path.

The numba path is used when numba imports cleanly and the environment
variable ``NETPROMPT_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are
always importable so tests and ``benchmarks/bench_kernels.py`` can compare
them directly.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

_DISABLED = os.environ.get("NETPROMPT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba missing or broken
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# CSS residuals and gradient for ARMA(p, q) on an already-differenced series
# ---------------------------------------------------------------------------

def css_residuals_numpy(w, c, phi, theta):
    """Conditional residuals and the gradient of their mean square.

    Parameters
    ----------
    w : ndarray
        Differenced series.
    c : float
        Intercept.
    phi, theta : ndarray
        AR and MA coefficients.

    Returns
    -------
    resid : ndarray
        Residuals for ``t = p .. n-1`` (pre-sample residuals are zero).
    grad : ndarray
        Gradient of ``mean(resid**2)`` w.r.t. ``(c, phi..., theta...)``.
    """
    w = np.asarray(w, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    p, q = phi.size, theta.size
    n = w.size
    m = n - p
    a = np.concatenate(([1.0], theta))

    u = w[p:] - c
    lagged_w = [w[p - i:n - i] for i in range(1, p + 1)]
    for i in range(p):
        u = u - phi[i] * lagged_w[i]
    e = lfilter([1.0], a, u)

    dirs = [-np.ones(m)]
    dirs.extend(-lw for lw in lagged_w)
    for k in range(1, q + 1):
        lag = np.zeros(m)
        lag[k:] = e[:m - k]
        dirs.append(-lag)
    grad = np.empty(1 + p + q)
    for j, d in enumerate(dirs):
        de = lfilter([1.0], a, d)
        grad[j] = 2.0 * np.dot(e, de) / m
    return e, grad


def _css_residuals_loop(w, c, phi, theta):
    p = phi.shape[0]
    q = theta.shape[0]
    n = w.shape[0]
    m = n - p
    npar = 1 + p + q
    e = np.zeros(m)
    de = np.zeros((m, npar))
    grad = np.zeros(npar)
    for s in range(m):
        t = s + p
        val = w[t] - c
        for i in range(p):
            val -= phi[i] * w[t - i - 1]
        for j in range(q):
            if s - j - 1 >= 0:
                val -= theta[j] * e[s - j - 1]
        e[s] = val

        de[s, 0] = -1.0
        for i in range(p):
            de[s, 1 + i] = -w[t - i - 1]
        for k in range(q):
            if s - k - 1 >= 0:
                de[s, 1 + p + k] = -e[s - k - 1]
        for j in range(q):
            if s - j - 1 >= 0:
                for r in range(npar):
                    de[s, r] -= theta[j] * de[s - j - 1, r]
        for r in range(npar):
            grad[r] += 2.0 * e[s] * de[s, r]
    for r in range(npar):
        grad[r] /= m
    return e, grad


# ---------------------------------------------------------------------------
# Hourly binning of (cell, hour, value) triples
# ---------------------------------------------------------------------------

def bin_hourly_numpy(cell_idx, hour_idx, values, n_cells, n_hours):
    flat = np.asarray(cell_idx, dtype=np.int64) * n_hours + np.asarray(hour_idx, dtype=np.int64)
    out = np.bincount(flat, weights=np.asarray(values, dtype=np.float64), minlength=n_cells * n_hours)
    return out.reshape(n_cells, n_hours)


def _bin_hourly_loop(cell_idx, hour_idx, values, n_cells, n_hours):
    out = np.zeros((n_cells, n_hours))
    for i in range(values.shape[0]):
        out[cell_idx[i], hour_idx[i]] += values[i]
    return out


# ---------------------------------------------------------------------------
# Shannon rates for every user under one power vector
# ---------------------------------------------------------------------------

def user_rates_numpy(powers, gains, serving, bw_per_user, noise_w):
    """Rates (bit/s) for users with linear ``gains[u, b]`` from each BS ``b``."""
    rx = gains * powers[None, :]
    idx = np.arange(gains.shape[0])
    signal = rx[idx, serving]
    interference = rx.sum(axis=1) - signal
    return bw_per_user * np.log2(1.0 + signal / (interference + noise_w))


def _user_rates_loop(powers, gains, serving, bw_per_user, noise_w):
    n_users, n_bs = gains.shape
    out = np.empty(n_users)
    for u in range(n_users):
        b = serving[u]
        signal = powers[b] * gains[u, b]
        interference = 0.0
        for j in range(n_bs):
            if j != b:
                interference += powers[j] * gains[u, j]
        out[u] = bw_per_user[u] * np.log2(1.0 + signal / (interference + noise_w))
    return out


if HAVE_NUMBA:
    css_residuals_numba = njit(cache=True)(_css_residuals_loop)
    bin_hourly_numba = njit(cache=True)(_bin_hourly_loop)
    user_rates_numba = njit(cache=True)(_user_rates_loop)
else:  # pragma: no cover
    css_residuals_numba = None
    bin_hourly_numba = None
    user_rates_numba = None


def css_residuals(w, c, phi, theta):
    if USE_NUMBA:
        return css_residuals_numba(
            np.ascontiguousarray(w, dtype=np.float64), float(c),
            np.ascontiguousarray(phi, dtype=np.float64),
            np.ascontiguousarray(theta, dtype=np.float64),
        )
    return css_residuals_numpy(w, c, phi, theta)


def bin_hourly(cell_idx, hour_idx, values, n_cells, n_hours):
    if USE_NUMBA:
        return bin_hourly_numba(
            np.ascontiguousarray(cell_idx, dtype=np.int64),
            np.ascontiguousarray(hour_idx, dtype=np.int64),
            np.ascontiguousarray(values, dtype=np.float64),
            int(n_cells), int(n_hours),
        )
    return bin_hourly_numpy(cell_idx, hour_idx, values, n_cells, n_hours)


def user_rates(powers, gains, serving, bw_per_user, noise_w):
    if USE_NUMBA:
        return user_rates_numba(
            np.ascontiguousarray(powers, dtype=np.float64),
            np.ascontiguousarray(gains, dtype=np.float64),
            np.ascontiguousarray(serving, dtype=np.int64),
            np.ascontiguousarray(bw_per_user, dtype=np.float64),
            float(noise_w),
        )
    return user_rates_numpy(powers, gains, serving, bw_per_user, noise_w)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
