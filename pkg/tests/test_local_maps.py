import numpy as np
import pytest

from gammanoise import distributions as d
from gammanoise import estimators as est
from gammanoise import local_maps as lm
from gammanoise import phantom as ph
from gammanoise.estimators import Method


@pytest.fixture(scope="module")
def rayleigh_maps():
    rng = np.random.default_rng(3)
    return d.sample_ncchi(rng, d.NcChiParams(0.0, 5.0, 1.0), 16 ** 3 * 33).reshape(16, 16, 16, 33)


class TestWindow:
    def test_triple(self):
        assert lm.window_triple(3) == (3, 3, 3)
        assert lm.window_triple([1, 3, 5]) == (1, 3, 5)

    @pytest.mark.parametrize("bad", [2, 0, (3, 3), (3, 3, 4)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            lm.window_triple(bad)


class TestEstimateField:
    @pytest.mark.parametrize("method", list(Method))
    def test_uniform_rayleigh(self, rayleigh_maps, method):
        field = lm.estimate_field(rayleigh_maps, 3, method)
        assert field.valid.all()
        assert field.shape == (16, 16, 16)
        assert np.mean(field.sigma_map) == pytest.approx(5.0, rel=0.03)
        assert np.mean(field.n_map) == pytest.approx(1.0, rel=0.10)

    def test_single_sample_windows_invalid(self, rayleigh_maps):
        field = lm.estimate_field(rayleigh_maps[..., :1], 1)
        assert not field.valid.any()
        assert np.all(np.isnan(field.sigma_map))

    def test_three_d_input_is_one_volume(self, rayleigh_maps):
        a = lm.estimate_field(rayleigh_maps[..., 0], 3)
        b = lm.estimate_field(rayleigh_maps[..., :1], 3)
        assert np.array_equal(a.sigma_map, b.sigma_map, equal_nan=True)

    def test_zero_windows_invalid(self):
        data = np.zeros((6, 6, 6, 4))
        data[4:, 4:, 4:] = np.random.default_rng(0).random((2, 2, 2, 4)) + 0.5
        field = lm.estimate_field(data, 3)
        assert not field.valid[0, 0, 0] and np.isnan(field.sigma_map[0, 0, 0])
        assert field.valid[5, 5, 5]

    def test_border_windows_are_clamped(self, rayleigh_maps):
        field = lm.estimate_field(rayleigh_maps, 3)
        corner = est.estimate(rayleigh_maps[:2, :2, :2])
        assert field.sigma_map[0, 0, 0] == pytest.approx(corner.sigma_g, rel=1e-12)
        assert field.n_map[0, 0, 0] == pytest.approx(corner.n_dof, rel=1e-12)

    @pytest.mark.parametrize("method", list(Method))
    def test_whole_volume_window(self, rayleigh_maps, method):
        field = lm.estimate_field(rayleigh_maps, 31, method)
        ref = est.estimate(rayleigh_maps, method)
        assert np.max(np.abs(field.sigma_map / ref.sigma_g - 1)) <= 1e-12
        assert np.max(np.abs(field.n_map / ref.n_dof - 1)) <= 1e-12

    def test_shift_invariance(self, rayleigh_maps):
        a = lm.estimate_field(rayleigh_maps, 3)
        b = lm.estimate_field(np.roll(rayleigh_maps, 1, axis=0), 3)
        assert np.array_equal(a.sigma_map[1:14], b.sigma_map[2:15])
        assert np.array_equal(a.n_map[1:14], b.n_map[2:15])

    def test_tracks_spatial_sigma(self):
        spec = ph.PhantomSpec(shape=(24, 24, 24), k_volumes=65, n_dof=4,
                              signal_model=ph.SignalModel.uniform(0), reference_signal=600,
                              snr=30, tau_profile="sphere_ramp", seed=2)
        out = ph.generate(spec)
        field = lm.estimate_field(out.noisy, 3)
        r = np.corrcoef(field.sigma_map.ravel(), out.sigma_true.ravel())[0, 1]
        assert r >= 0.95

    def test_ml_backends_agree(self, rayleigh_maps, backend):
        small = rayleigh_maps[:6, :6, :6, :5]
        field = lm.estimate_field(small, 3, "ml", backend=backend)
        for idx in [(0, 0, 0), (3, 2, 4), (5, 5, 5)]:
            lo = [max(i - 1, 0) for i in idx]
            window = small[lo[0]:idx[0] + 2, lo[1]:idx[1] + 2, lo[2]:idx[2] + 2]
            ref = est.estimate(window, "ml")
            assert field.sigma_map[idx] == pytest.approx(ref.sigma_g, rel=1e-9)
            assert field.n_map[idx] == pytest.approx(ref.n_dof, rel=1e-9)
        assert field.converged.all()


class TestFieldSummary:
    def make_field(self, sigma, n=None):
        sigma = np.asarray(sigma, dtype=float)
        n = np.ones_like(sigma) if n is None else n
        return lm.NoiseField(sigma_map=sigma, n_map=n, valid=np.isfinite(sigma), window=(3, 3, 3))

    def test_constant_field(self):
        s = lm.field_summary(self.make_field(np.full((3, 3, 3), 4.0)))
        assert s.sigma["sd"] == 0.0 and s.sigma["median"] == 4.0
        assert s.voxel_count == 27

    def test_nan_excluded(self):
        sigma = np.full((3, 3, 3), 2.0)
        sigma[1, 1, 1] = np.nan
        s = lm.field_summary(self.make_field(sigma))
        assert s.voxel_count == 26 and s.sigma["mean"] == 2.0

    def test_percentiles(self):
        sigma = np.arange(1.0, 28.0).reshape(3, 3, 3)
        s = lm.field_summary(self.make_field(sigma))
        assert s.sigma["p5"] == pytest.approx(np.percentile(sigma, 5))
        assert s.sigma["p95"] == pytest.approx(np.percentile(sigma, 95))
        assert s.n_dof["sd"] == 0.0

    def test_error_matches_evaluate(self, rayleigh_maps):
        field = lm.estimate_field(rayleigh_maps, 3)
        truth = np.full(field.shape, 5.0)
        mask = np.zeros(field.shape, dtype=bool)
        mask[2:12, 3:9] = True
        s = lm.field_summary(field, mask, true_sigma=truth)
        rec = ph.evaluate(field.sigma_map, truth, mask)
        assert abs(s.sigma_error["median"] - rec.median) <= 1e-12
        assert abs(s.sigma_error["mean"] - rec.mean) <= 1e-12
        assert "sigma_error" in s.as_dict()

    def test_empty_mask(self):
        field = self.make_field(np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            lm.field_summary(field, np.zeros((2, 2, 2), dtype=bool))

    def test_mask_shape(self):
        field = self.make_field(np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            lm.field_summary(field, np.ones((2, 2, 3), dtype=bool))
