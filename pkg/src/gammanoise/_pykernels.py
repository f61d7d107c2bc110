"""Pure numpy/Python versions of the batch kernels in ``_ckernels``.

Selected when the compiled extension is missing or ``GAMMANOISE_PURE=1``.
Signatures and results match the compiled versions.
"""

import math

import numpy as np

from . import specfun
from .estimators import DegenerateSampleError, PowerSums, n_from_ml, sigma_from_ml

__all__ = ["correct_eta_batch", "ml_batch", "kummer_neg_half"]


def kummer_neg_half(n, y):
    """Vectorised 1F1(-1/2; n; -y) for y >= 0, via exp(-y) 1F1(n + 1/2; n; y)."""
    n, y = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(y, dtype=float))
    out = np.ones(n.shape)
    c = 0.5 - n
    series = (y > 0) & ~((y > 700.0) & (np.abs(-0.5 * c) < 0.05 * y))
    for idx in zip(*np.nonzero((y > 0) & ~series)):
        out[idx] = specfun.kummer_1f1(-0.5, n[idx], -y[idx])
    if not np.any(series):
        return out
    nn = n[series]
    yy = y[series]
    a = nn + 0.5
    # terms are scaled by exp(-y) from the start; y <= 700 keeps them finite
    term = np.exp(-yy)
    total = term.copy()
    active = np.ones(yy.shape, dtype=bool)
    k = 0
    while np.any(active) and k <= 100000:
        term = np.where(active, term * (a + k) * yy / ((nn + k) * (k + 1)), term)
        k += 1
        total = np.where(active, total + term, total)
        done = (term == 0.0) | ((term <= 1e-17 * total) & (k > yy - a))
        active &= ~done
    out[series] = total
    return out


def _beta_n(n):
    lg = np.vectorize(math.lgamma, otypes=[float])
    return math.sqrt(2.0) * np.exp(lg(n + 0.5) - lg(n))


def correct_eta_batch(m_hat, sigma, n_dof, tolerance=1e-6, max_iterations=500):
    """Fixed-point bias correction for 1D arrays of equal length.

    Returns ``(eta, iterations, converged, clamped)``.
    """
    m = np.asarray(m_hat, dtype=float)
    s = np.asarray(sigma, dtype=float)
    n = np.asarray(n_dof, dtype=float)
    if not (m.shape == s.shape == n.shape) or m.ndim != 1:
        raise ValueError("m_hat, sigma and n_dof must have the same length")
    eta = m.copy()
    iterations = np.zeros(m.shape, dtype=np.int64)
    converged = s == 0.0
    clamped = np.zeros(m.shape, dtype=bool)
    active = ~converged
    idx = np.nonzero(active)[0]
    if idx.size == 0:
        return eta, iterations, converged, clamped
    mi, si, ni = m[idx], s[idx], n[idx]
    beta = _beta_n(ni)
    cur = mi.copy()
    for it in range(1, max_iterations + 1):
        r = cur * cur / (si * si)
        f = beta * kummer_neg_half(ni, 0.5 * r)
        rad = mi * mi + (2.0 * ni + r - f * f - 2.0 * ni) * si * si
        neg = rad < 0.0
        new = np.sqrt(np.where(neg, 0.0, rad))
        clamped[idx] = neg
        iterations[idx] = it
        done = np.abs(new - cur) < tolerance * si
        eta[idx] = new
        converged[idx[done]] = True
        keep = ~done
        idx, mi, si, ni, beta, cur = idx[keep], mi[keep], si[keep], ni[keep], beta[keep], new[keep]
        if idx.size == 0:
            break
    return eta, iterations, converged, clamped


def ml_batch(count, sum_m, sum_m2, sum_log_m2, n_positive):
    """Maximum-likelihood (sigma_g, N) for many independent sample sets.

    Returns ``(sigma, n_dof, valid, converged)``; degenerate sets are NaN.
    """
    count = np.asarray(count, dtype=float)
    size = count.size
    sigma = np.full(size, np.nan)
    ndof = np.full(size, np.nan)
    valid = np.zeros(size, dtype=bool)
    conv = np.zeros(size, dtype=bool)
    columns = [np.asarray(c, dtype=float) for c in (sum_m, sum_m2, sum_log_m2, n_positive)]
    for i in range(size):
        if count[i] < 2 or columns[3][i] == 0:
            continue
        sums = PowerSums(int(count[i]), columns[0][i], columns[1][i], 0.0,
                         columns[2][i], int(columns[3][i]))
        try:
            s, _, ok_s = sigma_from_ml(sums)
        except DegenerateSampleError:
            continue
        n, _, ok_n = n_from_ml(sums, s)
        sigma[i], ndof[i], valid[i], conv[i] = s, n, True, ok_s and ok_n
    return sigma, ndof, valid, conv
