# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels: voxelwise bias correction and per-window ML fits.

Mirrors the scalar algorithms of ``specfun``, ``estimators`` and
``bias_correction`` so both backends agree to rounding. Loops run without the
GIL; callers split work into chunks to use several threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, lgamma, INFINITY, NAN, isfinite

cnp.import_array()

cdef double EPS = 2.220446049250313e-16
cdef double NEWTON_ATOL = 1e-13
cdef int MAX_NEWTON = 100
cdef double ASYMPTOTIC_FROM = 10.0
cdef double EULER_GAMMA = 0.57721566490153286060651209008240243

cdef double[8] BERNOULLI = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0,
                            5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0, -3617.0 / 510.0]


cdef inline double c_digamma(double x) noexcept nogil:
    cdef double acc = 0.0, inv2, series = 0.0
    cdef int k
    while x < ASYMPTOTIC_FROM:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    for k in range(8, 0, -1):
        series = series * inv2 + BERNOULLI[k - 1] / (2 * k)
    return acc + log(x) - 0.5 / x - series * inv2


cdef inline double c_trigamma(double x) noexcept nogil:
    cdef double acc = 0.0, inv, inv2, series = 0.0
    cdef int k
    while x < ASYMPTOTIC_FROM:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    for k in range(8, 0, -1):
        series = series * inv2 + BERNOULLI[k - 1]
    return acc + inv + 0.5 * inv2 + series * inv2 * inv


cdef double kummer_neg_half(double n, double y) noexcept nogil:
    """1F1(-1/2; n; -y) for y >= 0, via exp(-y) 1F1(n + 1/2; n; y)."""
    cdef double a = n + 0.5, c, term = 1.0, total = 1.0, log_scale = 0.0, nxt
    cdef int k = 0, s
    if y == 0.0:
        return 1.0
    c = 0.5 - n
    if y > 700.0 and fabs(-0.5 * c) < 0.05 * y:
        total = 1.0
        term = 1.0
        for s in range(500):
            nxt = term * (-0.5 + s) * (c + s) / ((s + 1) * y)
            if fabs(nxt) >= fabs(term) and s > 0:
                break
            term = nxt
            total += term
            if fabs(term) < 1e-17 * fabs(total):
                break
        return exp(lgamma(n) - lgamma(n + 0.5) + 0.5 * log(y)) * total
    while True:
        term *= (a + k) * y / ((n + k) * (k + 1))
        k += 1
        total += term
        if total > 1e250:
            term *= 1e-250
            total *= 1e-250
            log_scale += 250.0 * log(10.0)
        if term == 0.0:
            break
        if term <= 1e-17 * total and k > y - a:
            break
        if k > 100000:
            break
    return exp(log(total) + log_scale - y)


cdef inline double c_beta_n(double n) noexcept nogil:
    return sqrt(2.0) * exp(lgamma(n + 0.5) - lgamma(n))


cdef inline double c_xi(double eta, double sigma, double n, double beta) noexcept nogil:
    cdef double r = eta * eta / (sigma * sigma)
    cdef double f = beta * kummer_neg_half(n, 0.5 * r)
    return 2.0 * n + r - f * f


def correct_eta_batch(m_hat, sigma, n_dof, double tolerance=1e-6, int max_iterations=500):
    """Fixed-point bias correction for 1D arrays of equal length.

    Returns ``(eta, iterations, converged, clamped)``.
    """
    cdef cnp.ndarray[double, ndim=1] m = np.ascontiguousarray(m_hat, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] s = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] nn = np.ascontiguousarray(n_dof, dtype=np.float64)
    cdef Py_ssize_t size = m.shape[0], i
    if s.shape[0] != size or nn.shape[0] != size:
        raise ValueError("m_hat, sigma and n_dof must have the same length")
    out = np.empty(size, dtype=np.float64)
    iters = np.zeros(size, dtype=np.int64)
    conv = np.zeros(size, dtype=np.uint8)
    clamp = np.zeros(size, dtype=np.uint8)
    cdef double[::1] ov = out
    cdef long long[::1] iv = iters
    cdef unsigned char[::1] cv = conv
    cdef unsigned char[::1] kv = clamp
    cdef double[::1] mv = m, sv = s, nv = nn
    cdef double eta, new, rad, beta, mh, sg, nd
    cdef int it
    with nogil:
        for i in range(size):
            mh = mv[i]
            sg = sv[i]
            nd = nv[i]
            if sg == 0.0:
                ov[i] = mh
                cv[i] = 1
                continue
            beta = c_beta_n(nd)
            eta = mh
            new = mh
            kv[i] = 0
            for it in range(1, max_iterations + 1):
                rad = mh * mh + (c_xi(eta, sg, nd, beta) - 2.0 * nd) * sg * sg
                if rad < 0.0:
                    new = 0.0
                    kv[i] = 1
                else:
                    new = sqrt(rad)
                    kv[i] = 0
                iv[i] = it
                if fabs(new - eta) < tolerance * sg:
                    cv[i] = 1
                    eta = new
                    break
                eta = new
            ov[i] = eta
    return out, iters, conv.astype(bool), clamp.astype(bool)


cdef double newton_sigma(double v, double s2, double mean_log, double x0,
                         int* iterations, int* converged) noexcept nogil:
    # f(s) = psi(s2 / (2 v s^2)) - mean_log + log(2 s^2), decreasing in s
    cdef double x = x0, lo = 0.0, hi = INFINITY, a, fx, d, x_new, step
    cdef int it
    converged[0] = 0
    for it in range(1, MAX_NEWTON + 1):
        a = s2 / (2.0 * v * x * x)
        fx = c_digamma(a) - mean_log + log(2.0 * x * x)
        if fx == 0.0:
            iterations[0] = it - 1
            converged[0] = 1
            return x
        if fx < 0.0:
            hi = hi if hi < x else x
        else:
            lo = lo if lo > x else x
        d = -c_trigamma(a) * s2 / (v * x * x * x) + 2.0 / x
        x_new = x - fx / d if (d != 0.0 and isfinite(d)) else NAN
        if not (lo < x_new and x_new < hi):
            if hi == INFINITY:
                x_new = 2.0 * x
            elif lo == 0.0:
                x_new = 0.5 * x
            else:
                x_new = 0.5 * (lo + hi)
        step = fabs(x_new - x)
        x = x_new
        if step < NEWTON_ATOL or step <= 8 * EPS * x:
            iterations[0] = it
            converged[0] = 1
            return x
    iterations[0] = MAX_NEWTON
    return x


cdef double newton_n(double y, int* iterations, int* converged) noexcept nogil:
    # psi(n) = y, increasing in n
    cdef double x, lo = 0.0, hi = INFINITY, fx, d, x_new, step
    cdef int it
    if y >= -2.22:
        x = exp(y) + 0.5
    else:
        x = -1.0 / (y + c_digamma(1.0))
    converged[0] = 0
    for it in range(1, MAX_NEWTON + 1):
        fx = c_digamma(x) - y
        if fx == 0.0:
            iterations[0] = it - 1
            converged[0] = 1
            return x
        if fx > 0.0:
            hi = hi if hi < x else x
        else:
            lo = lo if lo > x else x
        d = c_trigamma(x)
        x_new = x - fx / d if (d != 0.0 and isfinite(d)) else NAN
        if not (lo < x_new and x_new < hi):
            if hi == INFINITY:
                x_new = 2.0 * x
            elif lo == 0.0:
                x_new = 0.5 * x
            else:
                x_new = 0.5 * (lo + hi)
        step = fabs(x_new - x)
        x = x_new
        if step < NEWTON_ATOL or step <= 8 * EPS * x:
            iterations[0] = it
            converged[0] = 1
            return x
    iterations[0] = MAX_NEWTON
    return x


def ml_batch(count, sum_m, sum_m2, sum_log_m2, n_positive):
    """Maximum-likelihood (sigma_g, N) for many independent sample sets.

    Inputs are 1D arrays of power sums. Degenerate sets (fewer than two
    samples, all zero, or a non-positive log-moment gap) come back as NaN
    with ``valid`` False.

    Returns ``(sigma, n_dof, valid, converged)``.
    """
    cdef double[::1] cv = np.ascontiguousarray(count, dtype=np.float64)
    cdef double[::1] m1 = np.ascontiguousarray(sum_m, dtype=np.float64)
    cdef double[::1] m2 = np.ascontiguousarray(sum_m2, dtype=np.float64)
    cdef double[::1] lg = np.ascontiguousarray(sum_log_m2, dtype=np.float64)
    cdef double[::1] npos = np.ascontiguousarray(n_positive, dtype=np.float64)
    cdef Py_ssize_t size = cv.shape[0], i
    sigma = np.full(size, np.nan)
    ndof = np.full(size, np.nan)
    valid = np.zeros(size, dtype=np.uint8)
    conv = np.zeros(size, dtype=np.uint8)
    cdef double[::1] sv = sigma, nv = ndof
    cdef unsigned char[::1] vv = valid, okv = conv
    cdef double v, mean_log, gap, var, x0, s, y
    cdef int it_s, ok_s, it_n, ok_n
    with nogil:
        for i in range(size):
            v = cv[i]
            if v < 2.0 or npos[i] == 0.0:
                continue
            mean_log = lg[i] / npos[i]
            gap = log(m2[i] / v) - mean_log
            if not gap > 1e-13:
                continue
            var = (m2[i] - m1[i] * m1[i] / v) / (v - 1.0)
            x0 = sqrt(var) if var > 0.0 else 0.0
            if not x0 > 0.0:
                x0 = sqrt(m2[i] / v)
            s = newton_sigma(v, m2[i], mean_log, x0, &it_s, &ok_s)
            y = mean_log - log(2.0 * s * s)
            nv[i] = newton_n(y, &it_n, &ok_n)
            sv[i] = s
            vv[i] = 1
            okv[i] = 1 if (ok_s and ok_n) else 0
    return sigma, ndof, valid.astype(bool), conv.astype(bool)
