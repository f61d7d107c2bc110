"""Scalar special functions: log-gamma, polygamma, incomplete gamma, Bessel I and 1F1.

Everything here is written against the :mod:`math` module only so the
estimators do not depend on a particular scipy build. Real (non-integer)
orders are accepted everywhere.
"""

import math
from statistics import NormalDist

__all__ = [
    "ln_gamma",
    "digamma",
    "trigamma",
    "reg_inc_gamma_p",
    "reg_inc_gamma_q",
    "inv_reg_inc_gamma_p",
    "bessel_i",
    "bessel_i_scaled",
    "log_bessel_i",
    "kummer_1f1",
    "EULER_GAMMA",
]

EULER_GAMMA = 0.57721566490153286060651209008240243
_LN_SQRT_2PI = 0.91893853320467274178032973640561764
_EPS = 2.220446049250313e-16

# B_2k / (2k (2k - 1)), Stirling series for log-gamma
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
# B_2k
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)

_ASYMPTOTIC_FROM = 10.0


def _check_positive(name, x):
    if not x > 0.0 or math.isinf(x):
        raise ValueError(f"{name} requires a finite positive argument, got {x!r}")


def _stirling_correction(x):
    """log Gamma(x) - [(x - 1/2) log x - x + log sqrt(2 pi)], for x >= 10."""
    inv = 1.0 / x
    inv2 = inv * inv
    acc = 0.0
    for c in reversed(_STIRLING):
        acc = acc * inv2 + c
    return acc * inv


def ln_gamma(x):
    """Natural logarithm of the gamma function for ``x > 0``.

    Uses the Stirling series with upward recurrence below ``x = 10``.

    Raises
    ------
    ValueError
        If ``x <= 0``.
    """
    x = float(x)
    _check_positive("ln_gamma", x)
    if x == 1.0 or x == 2.0:
        return 0.0
    shift = 0.0
    if x < _ASYMPTOTIC_FROM:
        # log of x (x+1) ... (x+n-1), accumulated as a product to keep rounding low
        prod = 1.0
        while x < _ASYMPTOTIC_FROM:
            prod *= x
            x += 1.0
        shift = math.log(prod)
    return (x - 0.5) * math.log(x) - x + _LN_SQRT_2PI + _stirling_correction(x) - shift


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x) for ``x > 0``."""
    x = float(x)
    _check_positive("digamma", x)
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for k in range(len(_BERNOULLI), 0, -1):
        series = series * inv2 + _BERNOULLI[k - 1] / (2 * k)
    return acc + math.log(x) - 0.5 / x - series * inv2


def trigamma(x):
    """Trigamma function psi'(x) for ``x > 0``."""
    x = float(x)
    _check_positive("trigamma", x)
    acc = 0.0
    while x < _ASYMPTOTIC_FROM:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    for k in range(len(_BERNOULLI), 0, -1):
        series = series * inv2 + _BERNOULLI[k - 1]
    return acc + inv + 0.5 * inv2 + series * inv2 * inv


def _log1pmx(u):
    """log(1 + u) - u, accurate for small ``u``."""
    if abs(u) < 0.1:
        # alternating series -u^2/2 + u^3/3 - ...
        term = -u * u
        acc = 0.0
        k = 2
        while True:
            contrib = term / k
            acc += contrib
            if abs(contrib) <= 1e-17 * abs(acc):
                return acc
            term *= -u
            k += 1
    return math.log1p(u) - u


def _log_gamma_kernel(a, x):
    """log(x**a * exp(-x) / Gamma(a)), the common factor of P and Q."""
    if x == 0.0:
        return -math.inf
    if a >= _ASYMPTOTIC_FROM:
        # a log(x/a) - (x - a) written through log1pmx to avoid cancelling thousands
        u = (x - a) / a
        return (a * _log1pmx(u) + 0.5 * math.log(a) - _LN_SQRT_2PI
                - _stirling_correction(a))
    return a * math.log(x) - x - ln_gamma(a)


def _gamma_series(a, x):
    """Lower regularized P(a, x) by its power series; best for x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= x / ap
        total += term
        if term < total * 1e-17:
            break
    return total * math.exp(_log_gamma_kernel(a, x))


def _gamma_cont_frac(a, x):
    """Upper regularized Q(a, x) by modified Lentz continued fraction; x >= a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(_log_gamma_kernel(a, x)) * h


def _check_gamma_args(a, x):
    a = float(a)
    x = float(x)
    _check_positive("incomplete gamma shape", a)
    if not x >= 0.0:
        raise ValueError(f"incomplete gamma argument must be >= 0, got {x!r}")
    return a, x


def reg_inc_gamma_p(a, x):
    """Lower regularized incomplete gamma function P(a, x)."""
    a, x = _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_cont_frac(a, x))


def reg_inc_gamma_q(a, x):
    """Upper regularized incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    a, x = _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return min(1.0, _gamma_cont_frac(a, x))


def _wilson_hilferty(a, p):
    z = NormalDist().inv_cdf(p)
    c = 1.0 / (9.0 * a)
    base = 1.0 - c + z * math.sqrt(c)
    if base > 0.0:
        x = a * base ** 3
        # the cube approximation degrades in the far left tail of small shapes
        if x > 0.0 and not (a < 1.0 and p < 0.5):
            return x
    # leading term of the series, P ~ x^a / Gamma(a + 1)
    return math.exp((math.log(p) + ln_gamma(a + 1.0)) / a)


def inv_reg_inc_gamma_p(a, p):
    """Inverse of P(a, .) for ``p`` in (0, 1).

    Starts from the Wilson-Hilferty cube approximation and refines with Newton
    steps, falling back to bisection whenever a step leaves the current bracket.
    The tail with the smaller probability is solved so that ``p`` near 1 keeps
    its relative precision.
    """
    a = float(a)
    p = float(p)
    _check_positive("inv_reg_inc_gamma_p shape", a)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")

    upper = p > 0.5
    target = 1.0 - p if upper else p

    def residual(x):
        # increasing in x in both branches
        if upper:
            return target - reg_inc_gamma_q(a, x)
        return reg_inc_gamma_p(a, x) - target

    x = _wilson_hilferty(a, p)
    lo, hi = 0.0, math.inf
    for _ in range(200):
        r = residual(x)
        if r == 0.0:
            return x
        if r > 0.0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        log_pdf = _log_gamma_kernel(a, x) - math.log(x)
        pdf = math.exp(log_pdf) if log_pdf > -700.0 else 0.0
        step_ok = False
        if pdf > 0.0:
            x_new = x - r / pdf
            step_ok = lo < x_new < hi
        if not step_ok:
            if math.isinf(hi):
                x_new = 2.0 * x if x > 0.0 else 1.0
            else:
                x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 4.0 * _EPS * x:
            return x_new
        x = x_new
    return x


def _log_bessel_series(nu, z):
    """log I_nu(z) by the ascending series, rescaled to survive large ``z``."""
    if z == 0.0:
        return 0.0 if nu == 0.0 else -math.inf
    q = 0.25 * z * z
    term = 1.0
    total = 1.0
    log_scale = 0.0
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + nu))
        total += term
        if term > 1e250:
            term *= 1e-250
            total *= 1e-250
            log_scale += 250.0 * math.log(10.0)
        if k > 0.5 * z and term <= total * 1e-17:
            break
    return nu * math.log(0.5 * z) - ln_gamma(nu + 1.0) + math.log(total) + log_scale


def _log_bessel_scaled_asymptotic(nu, z):
    """log(exp(-z) I_nu(z)) from the large-argument expansion."""
    mu = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    for k in range(1, 200):
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
    return math.log(total) - 0.5 * math.log(2.0 * math.pi * z)


def _use_asymptotic_bessel(nu, z):
    return z > 700.0 and z > 25.0 * (nu * nu + 1.0)


def _check_bessel_args(nu, z):
    nu = float(nu)
    z = float(z)
    if nu < -1.0:
        raise ValueError(f"Bessel order must be >= -1, got {nu!r}")
    if not z >= 0.0:
        raise ValueError(f"Bessel argument must be >= 0, got {z!r}")
    if nu < 0.0 and nu == math.floor(nu):
        nu = -nu  # I_{-n} = I_n for integer n
    return nu, z


def log_bessel_i(nu, z):
    """log I_nu(z); finite for arguments where I_nu itself would overflow."""
    nu, z = _check_bessel_args(nu, z)
    if _use_asymptotic_bessel(nu, z):
        return z + _log_bessel_scaled_asymptotic(nu, z)
    return _log_bessel_series(nu, z)


def bessel_i(nu, z):
    """Modified Bessel function of the first kind I_nu(z) for ``nu >= -1``, ``z >= 0``."""
    lv = log_bessel_i(nu, z)
    if nu < 0.0 and z == 0.0 and nu != math.floor(nu):
        return math.inf
    return math.exp(lv) if lv < 709.78 else math.inf


def bessel_i_scaled(nu, z):
    """Exponentially scaled Bessel function exp(-z) I_nu(z)."""
    nu, z = _check_bessel_args(nu, z)
    if nu < 0.0 and z == 0.0:
        return math.inf
    if _use_asymptotic_bessel(nu, z):
        return math.exp(_log_bessel_scaled_asymptotic(nu, z))
    return math.exp(_log_bessel_series(nu, z) - z)


def _log_kummer_positive_series(a, b, x):
    """Signed log of 1F1(a; b; x) for x >= 0 by the rescaled direct series.

    Returns ``(sign, log|value|)``.
    """
    term = 1.0
    total = 1.0
    log_scale = 0.0
    k = 0
    while True:
        term *= (a + k) * x / ((b + k) * (k + 1))
        k += 1
        total += term
        if abs(total) > 1e250:
            term *= 1e-250
            total *= 1e-250
            log_scale += 250.0 * math.log(10.0)
        if term == 0.0:
            break
        if abs(term) <= 1e-17 * abs(total) and k > x - a:
            break
        if k > 100000:
            break
    if total == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, total), math.log(abs(total)) + log_scale


def _kummer_negative_asymptotic(a, b, y):
    """1F1(a; b; -y) for large y > 0, leading algebraic expansion."""
    c = a - b + 1.0
    term = 1.0
    total = 1.0
    for s in range(0, 500):
        nxt = term * (a + s) * (c + s) / ((s + 1) * y)
        if abs(nxt) >= abs(term) and s > 0:
            break
        term = nxt
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
    return math.exp(ln_gamma(b) - ln_gamma(b - a) - a * math.log(y)) * total


def kummer_1f1(a, b, x):
    """Confluent hypergeometric function of the first kind, 1F1(a; b; x), for b > 0.

    Negative arguments go through the Kummer transformation
    ``1F1(a; b; x) = exp(x) 1F1(b - a; b; -x)`` so that the series has no
    cancellation; very large negative arguments use the asymptotic expansion.

    Raises
    ------
    OverflowError
        If the result is too large to represent.
    """
    a = float(a)
    b = float(b)
    x = float(x)
    _check_positive("kummer_1f1 b", b)
    if x == 0.0 or a == 0.0:
        return 1.0
    if a == b:
        return math.exp(x)
    if x < 0.0:
        y = -x
        c = a - b + 1.0
        if y > 700.0 and b - a > 0.0 and abs(a * c) < 0.05 * y:
            return _kummer_negative_asymptotic(a, b, y)
        sign, lv = _log_kummer_positive_series(b - a, b, y)
        lv -= y
    else:
        sign, lv = _log_kummer_positive_series(a, b, x)
    if lv > 709.78:
        raise OverflowError(f"1F1({a}, {b}, {x}) overflows double precision")
    return sign * math.exp(lv)
