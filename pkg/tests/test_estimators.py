import math

import numpy as np
import pytest

from gammanoise import distributions as d
from gammanoise import estimators as est
from gammanoise import specfun
from gammanoise.estimators import Method

EULER_GAMMA = 0.57721566490153286061


def draws(sigma, n, count=10 ** 5, seed=0):
    return d.sample_ncchi(np.random.default_rng(seed), d.NcChiParams(0.0, sigma, n), count)


def profile_log_likelihood(sigma, sums):
    """Gamma log-likelihood of t = m^2 / (2 sigma^2), maximised over N, plus the Jacobian."""
    v = sums.count
    y = sums.mean_log_m2 - math.log(2 * sigma * sigma)
    n, _, _ = est.n_from_ml(sums, sigma)
    t_mean = sums.sum_m2 / (2 * sigma * sigma * v)
    per_sample = (n - 1) * y - t_mean - math.lgamma(n)
    # Jacobian dt/dm = m / sigma^2 contributes -2 log sigma per sample
    return v * (per_sample - 2 * math.log(sigma))


def golden_section_max(f, lo, hi, tol):
    ratio = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, e = b - ratio * (b - a), a + ratio * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc > fe:
            b, e, fe = e, c, fc
            c = b - ratio * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + ratio * (b - a)
            fe = f(e)
    return 0.5 * (a + b)


class TestSampleTypes:
    def test_sample_set_validation(self):
        with pytest.raises(est.DegenerateSampleError):
            est.SampleSet([1.0])
        with pytest.raises(est.DegenerateSampleError):
            est.SampleSet([0.0, 0.0])
        with pytest.raises(ValueError):
            est.SampleSet([1.0, -1.0])
        with pytest.raises(ValueError):
            est.SampleSet([1.0, math.nan])

    def test_power_sums_add(self):
        a, b = draws(1, 1, 100, 1), draws(1, 1, 50, 2)
        joined = est.PowerSums.from_values(a) + est.PowerSums.from_values(b)
        whole = est.PowerSums.from_values(np.concatenate([a, b]))
        assert joined.count == whole.count == 150
        assert joined.sum_m4 == pytest.approx(whole.sum_m4, rel=1e-13)
        assert joined.sum_log_m2 == pytest.approx(whole.sum_log_m2, rel=1e-13)

    def test_zeros_kept_in_power_sums_only(self):
        s = est.PowerSums.from_values([0.0, 1.0, 2.0, 0.0])
        assert s.count == 4 and s.n_positive == 2 and s.n_zero == 2
        assert s.sum_m2 == 5.0
        assert s.mean_log_m2 == pytest.approx(math.log(4) / 2)
        res = est.estimate([0.0, 1.0, 2.0, 0.0, 3.0])
        assert res.zeros_excluded == 2 and res.sample_count == 5

    def test_method_parse(self):
        assert Method.parse("ml") is Method.MAXIMUM_LIKELIHOOD
        assert Method.parse("moments") is Method.MOMENTS
        with pytest.raises(ValueError):
            Method.parse("median")


class TestMoments:
    def test_central_chi(self):
        assert est.sigma_from_moments(draws(10, 4)) == pytest.approx(10, rel=0.01)

    def test_rayleigh(self):
        assert est.sigma_from_moments(draws(1, 1)) == pytest.approx(1, rel=0.01)

    def test_constant_samples_degenerate(self):
        with pytest.raises(est.DegenerateSampleError):
            est.sigma_from_moments(np.full(1000, 3.7))

    def test_n_from_constant_t(self):
        sigma, c = 2.5, 3.25
        m = np.full(10, sigma * math.sqrt(2 * c))
        assert est.n_from_mean(m, sigma) == pytest.approx(c, rel=1e-14)

    @pytest.mark.parametrize("sigma, n", [(1.0, 12.0), (2.0, 0.5)])
    def test_n_with_true_sigma(self, sigma, n):
        assert est.n_from_mean(draws(sigma, n), sigma) == pytest.approx(n, rel=0.02)

    def test_n_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            est.n_from_mean([1.0, 2.0], 0.0)


class TestMaximumLikelihood:
    def test_central_chi_few_iterations(self):
        m = draws(10, 4)
        sigma, iterations, converged = est.sigma_from_ml(m, sigma0=float(np.std(m, ddof=1)))
        assert sigma == pytest.approx(10, rel=0.01)
        assert converged and iterations <= 5

    def test_matches_profile_likelihood_grid(self):
        sums = est.PowerSums.from_values(draws(1, 1))
        sigma, _, _ = est.sigma_from_ml(sums)
        best = golden_section_max(lambda s: profile_log_likelihood(s, sums), 0.8, 1.2, 1e-7)
        assert abs(sigma - best) < 1e-5

    def test_constant_samples_degenerate(self):
        with pytest.raises(est.DegenerateSampleError):
            est.sigma_from_ml(np.full(50, 2.0))

    def test_minka_initial(self):
        assert est.minka_initial(0.0) == 1.5
        assert est.minka_initial(-3.0) == pytest.approx(1 / (3 + EULER_GAMMA), rel=1e-14)
        assert est.minka_initial(-3.0) == pytest.approx(0.2796, abs=1e-4)

    def test_n_with_true_sigma(self):
        n, _, converged = est.n_from_ml(draws(1, 8), 1.0)
        assert converged and n == pytest.approx(8, rel=0.02)

    @pytest.mark.parametrize("sigma, n", [(1.0, 0.5), (20.0, 4.0), (3.0, 12.0)])
    def test_stationarity(self, sigma, n):
        sums = est.PowerSums.from_values(draws(sigma, n, 10 ** 4))
        res = est.estimate(sums, Method.MAXIMUM_LIKELIHOOD)
        assert abs(est.ml_sigma_objective(res.sigma_g, sums)) < 1e-9
        y = sums.mean_log_m2 - math.log(2 * res.sigma_g ** 2)
        assert abs(specfun.digamma(res.n_dof) - y) < 1e-9

    @pytest.mark.parametrize("sigma", [0.3, 1.0, 7.0])
    def test_derivative_matches_finite_difference(self, sigma):
        sums = est.PowerSums.from_values(draws(2, 3, 1000))
        h = 1e-5 * sigma
        fd = (est.ml_sigma_objective(sigma + h, sums) - est.ml_sigma_objective(sigma - h, sums)) / (2 * h)
        assert est.ml_sigma_derivative(sigma, sums) == pytest.approx(fd, rel=1e-6)

    def test_n_derivative_matches_finite_difference(self):
        for x in (0.3, 2.0, 11.0):
            h = 1e-5 * x
            fd = (specfun.digamma(x + h) - specfun.digamma(x - h)) / (2 * h)
            assert specfun.trigamma(x) == pytest.approx(fd, rel=1e-6)

    def test_bad_start_is_safeguarded(self):
        m = draws(5, 2, 1000)
        for start in (1e-4, 1e4):
            sigma, _, converged = est.sigma_from_ml(m, sigma0=start)
            assert converged
            assert sigma == pytest.approx(est.sigma_from_ml(m)[0], rel=1e-10)


class TestEstimate:
    def test_moments(self):
        res = est.estimate(draws(10, 4))
        assert res.method is Method.MOMENTS
        assert res.sigma_g == pytest.approx(10, rel=0.01)
        assert res.n_dof == pytest.approx(4, rel=0.02)

    def test_ml_close_to_moments(self):
        m = draws(10, 4)
        a = est.estimate(m)
        b = est.estimate(m, "ml")
        assert b.converged and b.iterations > 0
        assert b.sigma_g == pytest.approx(a.sigma_g, rel=0.01)
        assert b.n_dof == pytest.approx(a.n_dof, rel=0.01)

    @pytest.mark.parametrize("method", list(Method))
    def test_minimal_set_never_crashes(self, method):
        for pair in ([1.0, 2.0], [1.0, 1.0], [0.0, 3.0], [1e-300, 1e300]):
            try:
                res = est.estimate(pair, method)
            except est.DegenerateSampleError:
                continue
            assert res.sigma_g > 0 and res.n_dof > 0

    @pytest.mark.parametrize("method", list(Method))
    @pytest.mark.parametrize("c", [0.1, 3.0, 1000.0])
    def test_scale_equivariance(self, method, c):
        m = draws(2, 3, 5000)
        base, scaled = est.estimate(m, method), est.estimate(c * m, method)
        assert scaled.sigma_g == pytest.approx(c * base.sigma_g, rel=1e-10)
        assert scaled.n_dof == pytest.approx(base.n_dof, rel=1e-10)

    def test_as_dict(self):
        out = est.estimate(draws(1, 1, 100)).as_dict()
        assert out["method"] == "moments" and out["sample_count"] == 100

    @pytest.mark.parametrize("method", list(Method))
    @pytest.mark.parametrize("sigma", [1.0, 20.0])
    @pytest.mark.parametrize("n", [0.5, 1.0, 4.0, 8.0, 12.0])
    def test_consistency_over_seeds(self, method, sigma, n):
        sig_err, n_err = [], []
        for seed in range(20):
            res = est.estimate(draws(sigma, n, seed=seed), method)
            sig_err.append(abs(res.sigma_g / sigma - 1))
            n_err.append(abs(res.n_dof / n - 1))
        assert np.mean(sig_err) <= 0.02
        assert np.mean(n_err) <= 0.02
