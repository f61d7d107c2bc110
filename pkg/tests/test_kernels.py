import os
import subprocess
import sys

import numpy as np
import pytest

from gammanoise import bias_correction as bc
from gammanoise import distributions as d
from gammanoise import estimators as est
from gammanoise import kernels, specfun
from gammanoise._pykernels import kummer_neg_half


def correction_grid():
    rows = []
    for n in (0.5, 1.0, 4.0, 12.0):
        for ratio in (0.0, 0.5, 1.0, 2.0, 5.0, 20.0):
            for sigma in (1.0, 7.0):
                eta = ratio * sigma
                rows.append((d.ncchi_mean(d.NcChiParams(eta, sigma, n)), sigma, n, eta))
    return np.array(rows)


def test_backend_names():
    assert kernels.BACKEND in kernels.available_backends()
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_vectorized_kummer_matches_scalar():
    rng = np.random.default_rng(1)
    n = rng.uniform(0.5, 20, 400)
    y = np.concatenate([rng.uniform(0, 50, 200), rng.uniform(0, 900, 200)])
    ref = np.array([specfun.kummer_1f1(-0.5, a, -b) for a, b in zip(n, y)])
    assert np.max(np.abs(kummer_neg_half(n, y) / ref - 1)) <= 1e-12


def test_correction_round_trip(backend):
    grid = correction_grid()
    eta, iterations, converged, clamped = kernels.correct_eta_batch(
        grid[:, 0], grid[:, 1], grid[:, 2], backend=backend)
    assert converged.all()
    assert np.all(np.abs(eta - grid[:, 3]) <= np.maximum(1e-2 * grid[:, 1], 1e-3 * grid[:, 3]))
    assert iterations.max() < 500


def test_correction_matches_scalar(backend):
    rng = np.random.default_rng(5)
    m = rng.uniform(0, 80, 60)
    sigma = rng.uniform(0.5, 10, 60)
    n = rng.uniform(0.5, 12, 60)
    eta, _, _, clamped = kernels.correct_eta_batch(m, sigma, n, backend=backend)
    for i in range(60):
        ref = bc.correct_eta(bc.CorrectionInput(m[i], sigma[i], n[i]))
        assert eta[i] == pytest.approx(ref.eta, rel=1e-9, abs=1e-9)
        assert clamped[i] == ref.clamped


def test_backends_agree():
    if len(kernels.available_backends()) < 2:
        pytest.skip("compiled extension not built")
    grid = correction_grid()
    a = kernels.correct_eta_batch(grid[:, 0], grid[:, 1], grid[:, 2], backend="cython")
    b = kernels.correct_eta_batch(grid[:, 0], grid[:, 1], grid[:, 2], backend="python")
    # both stop once a step falls below tolerance * sigma; slow iterates near
    # the noise floor may stop one step apart
    assert np.all(np.abs(a[0] - b[0]) <= 1e-6 * grid[:, 1])
    assert np.max(np.abs(a[0] - b[0])[grid[:, 3] > 0]) <= 1e-9
    assert np.array_equal(a[2], b[2]) and np.array_equal(a[3], b[3])


def test_ml_batch_matches_scalar(backend):
    rng = np.random.default_rng(2)
    sets = [d.sample_ncchi(rng, d.NcChiParams(0.0, s, n), 500)
            for s, n in [(1.0, 1.0), (20.0, 4.0), (3.0, 0.5), (0.1, 12.0)]]
    sets.append(np.full(10, 2.0))  # constant: no maximum
    sets.append(np.array([3.0]))  # too small
    sums = [est.PowerSums.from_values(s) for s in sets]
    cols = [np.array([getattr(s, f) for s in sums], dtype=float)
            for f in ("count", "sum_m", "sum_m2", "sum_log_m2", "n_positive")]
    sigma, n_dof, valid, converged = kernels.ml_batch(*cols, backend=backend)
    assert valid.tolist() == [True] * 4 + [False, False]
    assert np.all(np.isnan(sigma[4:]))
    for i in range(4):
        ref = est.estimate(sums[i], "ml")
        assert sigma[i] == pytest.approx(ref.sigma_g, rel=1e-12)
        assert n_dof[i] == pytest.approx(ref.n_dof, rel=1e-12)
        assert converged[i]


def test_threads_do_not_change_results(backend):
    rng = np.random.default_rng(3)
    m = rng.uniform(0, 100, 1001)
    one = kernels.correct_eta_batch(m, np.full(1001, 9.0), np.full(1001, 2.0), backend=backend)
    many = kernels.correct_eta_batch(m, np.full(1001, 9.0), np.full(1001, 2.0), threads=4,
                                     backend=backend)
    for a, b in zip(one, many):
        assert np.array_equal(a, b)


def test_pure_environment_variable():
    env = dict(os.environ, GAMMANOISE_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import gammanoise; print(gammanoise.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
