"""Local-window (sigma_g, N) fields from noise-only acquisitions.

Every sample of a noise map is pure noise, so each voxel gets its own
estimate from the window x K samples around it. Windows are clamped at the
borders (they shrink) instead of zero-padded, which would inject false zero
samples and bias sigma_g low.
"""

from dataclasses import dataclass
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .estimators import Method
from .phantom import percentage_error
from .volume_io import Volume4D

__all__ = ["NoiseField", "FieldSummary", "estimate_field", "field_summary", "window_triple"]

_EPS = np.finfo(float).eps


@dataclass
class NoiseField:
    """Voxelwise estimates; invalid voxels hold NaN and ``valid`` is False."""

    sigma_map: np.ndarray
    n_map: np.ndarray
    valid: np.ndarray
    window: tuple
    method: Method = Method.MOMENTS
    converged: np.ndarray = None

    @property
    def shape(self):
        return self.sigma_map.shape


@dataclass(frozen=True)
class FieldSummary:
    voxel_count: int
    sigma: dict  # median, mean, sd, p5, p95
    n_dof: dict
    sigma_error: dict = None  # percentage error stats when a truth field is given

    def as_dict(self):
        out = {"voxel_count": self.voxel_count, "sigma": self.sigma, "n_dof": self.n_dof}
        if self.sigma_error is not None:
            out["sigma_error"] = self.sigma_error
        return out


def window_triple(window):
    """Normalise an int or a 3-sequence of odd positive sizes to a tuple."""
    if np.isscalar(window):
        window = (window,) * 3
    window = tuple(int(w) for w in window)
    if len(window) != 3:
        raise ValueError(f"window needs 3 sizes, got {window}")
    for w in window:
        if w < 1 or w % 2 == 0:
            raise ValueError(f"window sizes must be odd and >= 1, got {window}")
    return window


def _window_sum(arr, window):
    # zero padding adds exact zeros, so interior sums are translation invariant
    out = arr
    for axis, w in enumerate(window):
        if w == 1:
            continue
        h = w // 2
        pad = [(0, 0)] * out.ndim
        pad[axis] = (h, h)
        padded = np.pad(out, pad)
        out = sliding_window_view(padded, w, axis=axis).sum(axis=-1)
    return out


def _window_counts(shape, window):
    counts = np.ones(shape)
    for axis, (length, w) in enumerate(zip(shape, window)):
        h = w // 2
        idx = np.arange(length)
        n = np.minimum(idx + h, length - 1) - np.maximum(idx - h, 0) + 1
        view = [1, 1, 1]
        view[axis] = length
        counts = counts * n.reshape(view)
    return counts


def _voxel_sums(data):
    m2 = data * data
    pos = m2 > 0
    with np.errstate(divide="ignore"):
        logs = np.where(pos, np.log(np.where(pos, m2, 1.0)), 0.0)
    return {
        "sum_m": data.sum(axis=3),
        "sum_m2": m2.sum(axis=3),
        "sum_m4": (m2 * m2).sum(axis=3),
        "sum_log": logs.sum(axis=3),
        "n_pos": pos.sum(axis=3).astype(float),
    }


def _moments(count, s2, s4):
    with np.errstate(divide="ignore", invalid="ignore"):
        radicand = s4 / s2 - s2 / count
        valid = (count >= 2) & (s2 > 0) & (radicand > 8 * _EPS * (s2 / count))
        sigma = np.where(valid, np.sqrt(np.where(valid, radicand, 1.0) / 2.0), np.nan)
        n = np.where(valid, s2 / (2.0 * count * sigma * sigma), np.nan)
    return sigma, n, valid


def estimate_field(noise_maps, window=3, method=Method.MOMENTS, threads=1, backend=None):
    """Estimate (sigma_g, N) in a window around every voxel.

    Parameters
    ----------
    noise_maps : Volume4D or ndarray (X, Y, Z[, K])
        Noise-only samples; a 3D array counts as K = 1.
    window : int or (int, int, int)
        Odd window sizes; windows are clamped to the volume.
    method : Method or str
        ``moments`` (default) or ``ml``.

    Returns
    -------
    NoiseField
        Windows with fewer than two samples, all zeros, or constant values are
        marked invalid (NaN).
    """
    method = Method.parse(method)
    window = window_triple(window)
    vol = noise_maps if isinstance(noise_maps, Volume4D) else Volume4D(np.asarray(noise_maps))
    data = vol.data
    spatial = data.shape[:3]
    sums = {key: _window_sum(val, window) for key, val in _voxel_sums(data).items()}
    count = _window_counts(spatial, window) * data.shape[3]
    if method is Method.MOMENTS:
        sigma, n, valid = _moments(count, sums["sum_m2"], sums["sum_m4"])
        converged = valid.copy()
    else:
        sigma, n, valid, converged = kernels.ml_batch(
            count, sums["sum_m"], sums["sum_m2"], sums["sum_log"], sums["n_pos"],
            threads=threads, backend=backend)
        sigma, n, valid, converged = (a.reshape(spatial) for a in (sigma, n, valid, converged))
    return NoiseField(sigma_map=sigma, n_map=n, valid=valid, window=window, method=method,
                      converged=converged)


def _stats(values):
    return {
        "median": float(np.median(values)),
        "mean": float(np.mean(values)),
        "sd": float(np.std(values)),
        "p5": float(np.percentile(values, 5)),
        "p95": float(np.percentile(values, 95)),
    }


def field_summary(field, region_mask=None, true_sigma=None):
    """Median, mean, SD and 5th/95th percentiles over valid voxels in ``region_mask``.

    With ``true_sigma`` the same statistics of the voxelwise percentage error
    are added.

    Raises
    ------
    ValueError
        If the mask shape differs from the field or no valid voxel is selected.
    """
    if region_mask is None:
        region_mask = np.ones(field.shape, dtype=bool)
    region_mask = np.asarray(region_mask, dtype=bool)
    if region_mask.shape != field.shape:
        raise ValueError(f"mask shape {region_mask.shape} != field shape {field.shape}")
    use = region_mask & field.valid & np.isfinite(field.sigma_map) & np.isfinite(field.n_map)
    if not np.any(use):
        raise ValueError("summary region contains no valid voxel")
    err = None
    if true_sigma is not None:
        err = _stats(percentage_error(field.sigma_map[use], np.asarray(true_sigma, float)[use]))
    return FieldSummary(voxel_count=int(np.count_nonzero(use)),
                        sigma=_stats(field.sigma_map[use]), n_dof=_stats(field.n_map[use]),
                        sigma_error=err)
