"""Method-of-moments and maximum-likelihood estimation of (sigma_g, N).

All estimators work on noise-only magnitudes ``m`` through the change of
variable ``t = m**2 / (2 sigma_g**2) ~ Gamma(N, 1)``. They only need a handful
of power sums, so :class:`PowerSums` is the working representation; a
:class:`SampleSet` is converted once and the sums can be added together when
samples are pooled over voxels.
"""

from dataclasses import dataclass
import enum
import math

import numpy as np

from . import specfun

__all__ = [
    "Method",
    "DegenerateSampleError",
    "SampleSet",
    "PowerSums",
    "EstimateResult",
    "sigma_from_moments",
    "n_from_mean",
    "sigma_from_ml",
    "n_from_ml",
    "minka_initial",
    "ml_sigma_objective",
    "ml_sigma_derivative",
    "estimate",
    "estimate_from_sums",
]

NEWTON_ATOL = 1e-13
MAX_NEWTON_ITERATIONS = 100
_EPS = np.finfo(float).eps


class Method(str, enum.Enum):
    MOMENTS = "moments"
    MAXIMUM_LIKELIHOOD = "maximum_likelihood"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"ml": cls.MAXIMUM_LIKELIHOOD, "mle": cls.MAXIMUM_LIKELIHOOD}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class DegenerateSampleError(ValueError):
    """The samples cannot identify sigma_g (constant, too few, or contaminated)."""


@dataclass(frozen=True)
class SampleSet:
    """Noise-only magnitude samples, flattened to one dimension."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        if values.size < 2:
            raise DegenerateSampleError(f"need at least 2 samples, got {values.size}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("samples must be finite and nonnegative")
        if not np.any(values > 0):
            raise DegenerateSampleError("all samples are zero")

    @property
    def count(self):
        return self.values.size


@dataclass(frozen=True)
class PowerSums:
    """Sufficient statistics of a sample for both estimators.

    ``sum_log_m2`` and ``n_positive`` only involve strictly positive samples;
    zeros stay in ``count`` and the power sums.
    """

    count: int
    sum_m: float
    sum_m2: float
    sum_m4: float
    sum_log_m2: float
    n_positive: int

    @classmethod
    def from_values(cls, values):
        m = np.asarray(values, dtype=float).ravel()
        with np.errstate(over="ignore"):
            m2 = m * m
        pos = m2[m2 > 0]
        # np.sum is pairwise, which keeps the error at O(log V) ulp
        return cls(
            count=int(m.size),
            sum_m=float(np.sum(m)),
            sum_m2=float(np.sum(m2)),
            sum_m4=float(np.sum(m2 * m2)) if np.all(np.isfinite(m2)) else math.inf,
            sum_log_m2=float(np.sum(np.log(pos))),
            n_positive=int(pos.size),
        )

    def __add__(self, other):
        return PowerSums(
            self.count + other.count,
            self.sum_m + other.sum_m,
            self.sum_m2 + other.sum_m2,
            self.sum_m4 + other.sum_m4,
            self.sum_log_m2 + other.sum_log_m2,
            self.n_positive + other.n_positive,
        )

    @property
    def n_zero(self):
        return self.count - self.n_positive

    @property
    def mean_log_m2(self):
        return self.sum_log_m2 / self.n_positive

    @property
    def sample_sd(self):
        v = self.count
        var = (self.sum_m2 - self.sum_m * self.sum_m / v) / (v - 1)
        return math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class EstimateResult:
    sigma_g: float
    n_dof: float
    method: Method
    iterations: int = 0
    converged: bool = True
    n_iterations: int = 0
    sample_count: int = 0
    zeros_excluded: int = 0

    def as_dict(self):
        return {
            "sigma_g": self.sigma_g,
            "n_dof": self.n_dof,
            "method": self.method.value,
            "iterations": self.iterations,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "sample_count": self.sample_count,
            "zeros_excluded": self.zeros_excluded,
        }


def _as_sums(samples):
    if isinstance(samples, PowerSums):
        sums = samples
    elif isinstance(samples, SampleSet):
        sums = PowerSums.from_values(samples.values)
    else:
        sums = PowerSums.from_values(SampleSet(samples).values)
    if sums.count < 2:
        raise DegenerateSampleError(f"need at least 2 samples, got {sums.count}")
    if sums.n_positive == 0:
        raise DegenerateSampleError("all samples are zero")
    if not (math.isfinite(sums.sum_m2) and math.isfinite(sums.sum_m4)):
        raise DegenerateSampleError("power sums overflow; rescale the samples")
    return sums


def _check_sigma(sigma_g):
    if not (sigma_g > 0 and math.isfinite(sigma_g)):
        raise ValueError(f"sigma_g must be finite and > 0, got {sigma_g}")


def sigma_from_moments(samples):
    """sigma_g from the equality of mean and variance of Gamma(N, 1).

    ``sigma_g = sqrt(sum m^4 / sum m^2 - sum m^2 / V) / sqrt(2)``.

    Raises
    ------
    DegenerateSampleError
        If the radicand is not positive (constant or contaminated samples).
    """
    s = _as_sums(samples)
    radicand = s.sum_m4 / s.sum_m2 - s.sum_m2 / s.count
    # rounding floor for constant samples, relative to the size of each term
    if not radicand > 8 * _EPS * (s.sum_m2 / s.count):
        raise DegenerateSampleError(
            f"moment radicand {radicand!r} is not positive; samples are constant "
            "or not noise-only")
    return math.sqrt(radicand / 2.0)


def n_from_mean(samples, sigma_g):
    """N as the sample mean of ``t = m^2 / (2 sigma_g^2)``."""
    _check_sigma(sigma_g)
    s = _as_sums(samples)
    return s.sum_m2 / (2.0 * s.count * sigma_g * sigma_g)


def ml_sigma_objective(sigma_g, sums):
    """f(sigma) = psi(sum m^2 / (2 V sigma^2)) - mean log m^2 + log(2 sigma^2)."""
    a = sums.sum_m2 / (2.0 * sums.count * sigma_g * sigma_g)
    return specfun.digamma(a) - sums.mean_log_m2 + math.log(2.0 * sigma_g * sigma_g)


def ml_sigma_derivative(sigma_g, sums):
    """df/dsigma = -psi'(A) sum m^2 / (V sigma^3) + 2 / sigma, A = sum m^2 / (2 V sigma^2)."""
    a = sums.sum_m2 / (2.0 * sums.count * sigma_g * sigma_g)
    return (-specfun.trigamma(a) * sums.sum_m2 / (sums.count * sigma_g ** 3)
            + 2.0 / sigma_g)


def _safeguarded_newton(f, fprime, x0, increasing):
    """Newton's method on a monotone f with a bracketing fallback.

    The bracket starts as (0, inf) and shrinks with every evaluated sign; a
    Newton step that would leave it is replaced by bisection (or by halving /
    doubling while one side is still open). Stops when the update is below
    ``NEWTON_ATOL`` or within a few ulp of the iterate.

    Returns ``(x, iterations, converged)``.
    """
    x = x0
    lo, hi = 0.0, math.inf
    for it in range(1, MAX_NEWTON_ITERATIONS + 1):
        fx = f(x)
        if fx == 0.0:
            return x, it - 1, True
        if (fx > 0.0) == increasing:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        d = fprime(x)
        x_new = x - fx / d if d != 0.0 and math.isfinite(d) else math.nan
        if not lo < x_new < hi:
            if math.isinf(hi):
                x_new = 2.0 * x
            elif lo == 0.0:
                x_new = 0.5 * x
            else:
                x_new = 0.5 * (lo + hi)
        step = abs(x_new - x)
        x = x_new
        if step < NEWTON_ATOL or step <= 8 * _EPS * x:
            return x, it, True
    return x, MAX_NEWTON_ITERATIONS, False


def sigma_from_ml(samples, sigma0=None):
    """Maximum-likelihood sigma_g, solving f(sigma) = 0 by safeguarded Newton.

    Parameters
    ----------
    samples : SampleSet, PowerSums or array_like
    sigma0 : float, optional
        Starting point; defaults to the sample standard deviation of ``m``.

    Returns
    -------
    (sigma_g, iterations, converged)
    """
    s = _as_sums(samples)
    # f(0+) = log(mean m^2) - mean log m^2; f decreases to -inf, so a root
    # exists only when this Jensen gap is positive
    gap = math.log(s.sum_m2 / s.count) - s.mean_log_m2
    if not gap > 1e-13:
        raise DegenerateSampleError(
            "samples are constant (log-moment gap is zero); no likelihood maximum")
    if sigma0 is None:
        sigma0 = s.sample_sd
    if not sigma0 > 0:
        sigma0 = math.sqrt(s.sum_m2 / s.count)
    return _safeguarded_newton(
        lambda x: ml_sigma_objective(x, s),
        lambda x: ml_sigma_derivative(x, s),
        float(sigma0),
        increasing=False,
    )


def minka_initial(y):
    """Starting point for psi^-1(y): ``exp(y) + 1/2`` above -2.22, else ``-1/(y + psi(1))``."""
    if y >= -2.22:
        return math.exp(y) + 0.5
    return -1.0 / (y + specfun.digamma(1.0))


def n_from_ml(samples, sigma_g):
    """Maximum-likelihood N, solving ``psi(N) = mean log(m^2 / (2 sigma_g^2))``.

    Returns
    -------
    (n_dof, iterations, converged)
    """
    _check_sigma(sigma_g)
    s = _as_sums(samples)
    y = s.mean_log_m2 - math.log(2.0 * sigma_g * sigma_g)
    return _safeguarded_newton(
        lambda x: specfun.digamma(x) - y,
        specfun.trigamma,
        minka_initial(y),
        increasing=True,
    )


def estimate_from_sums(sums, method=Method.MOMENTS):
    """Joint (sigma_g, N) estimate from precomputed :class:`PowerSums`."""
    method = Method.parse(method)
    sums = _as_sums(sums)
    if method is Method.MOMENTS:
        sigma = sigma_from_moments(sums)
        return EstimateResult(
            sigma_g=sigma,
            n_dof=n_from_mean(sums, sigma),
            method=method,
            sample_count=sums.count,
            zeros_excluded=sums.n_zero,
        )
    sigma, it_s, ok_s = sigma_from_ml(sums)
    n, it_n, ok_n = n_from_ml(sums, sigma)
    return EstimateResult(
        sigma_g=sigma,
        n_dof=n,
        method=method,
        iterations=it_s,
        converged=ok_s and ok_n,
        n_iterations=it_n,
        sample_count=sums.count,
        zeros_excluded=sums.n_zero,
    )


def estimate(samples, method=Method.MOMENTS):
    """Estimate (sigma_g, N) from noise-only magnitudes.

    ``moments`` uses the mean/variance identity of Gamma(N, 1); ``ml`` solves
    the likelihood equations, seeding sigma_g at the sample SD of ``m``.
    """
    return estimate_from_sums(_as_sums(samples), method)
