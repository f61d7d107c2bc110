"""Noncentral chi bias correction for arbitrary (also non-integer) N.

The first moment of a magnitude with noiseless signal ``eta`` is
``sigma_g beta_N 1F1(-1/2; N; -eta^2 / (2 sigma_g^2))``. Given an estimate
``m_hat`` of that moment, ``eta`` is recovered by the fixed point

    eta <- sqrt(max(0, m_hat^2 + (xi(eta) - 2N) sigma_g^2))

with the correction factor ``xi``. A negative radicand means ``m_hat`` lies
below the noise floor; ``eta`` is then clamped to zero.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels, specfun
from .distributions import beta_n
from .volume_io import Volume4D

__all__ = [
    "CorrectionInput",
    "EtaEstimate",
    "CorrectionResult",
    "beta_n",
    "xi",
    "correct_eta",
    "correct_volume",
    "smooth_magnitudes",
    "DEFAULT_TOLERANCE",
    "DEFAULT_MAX_ITERATIONS",
]

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 500


@dataclass(frozen=True)
class CorrectionInput:
    """First-moment estimate of one voxel with its noise parameters."""

    m_hat: float
    sigma_g: float
    n_dof: float

    def __post_init__(self):
        if not self.m_hat >= 0:
            raise ValueError(f"m_hat must be >= 0, got {self.m_hat}")
        if not self.sigma_g >= 0:
            raise ValueError(f"sigma_g must be >= 0, got {self.sigma_g}")
        if not self.n_dof > 0:
            raise ValueError(f"n_dof must be > 0, got {self.n_dof}")


@dataclass(frozen=True)
class EtaEstimate:
    eta: float
    iterations: int
    converged: bool
    clamped: bool


@dataclass
class CorrectionResult:
    """Corrected volume plus per-run diagnostics."""

    volume: Volume4D
    clamped_count: int
    unconverged_count: int
    max_iterations_used: int


def xi(eta, sigma_g, n_dof):
    """Correction factor ``2N + eta^2/sigma^2 - (beta_N 1F1(-1/2; N; -eta^2/(2 sigma^2)))^2``."""
    if not sigma_g > 0:
        raise ValueError(f"sigma_g must be > 0, got {sigma_g}")
    if not eta >= 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    r = (eta / sigma_g) ** 2
    f = beta_n(n_dof) * specfun.kummer_1f1(-0.5, n_dof, -0.5 * r)
    return 2.0 * n_dof + r - f * f


def correct_eta(inp, tolerance=DEFAULT_TOLERANCE, max_iterations=DEFAULT_MAX_ITERATIONS):
    """Recover the noiseless signal of one voxel from its first-moment estimate.

    Parameters
    ----------
    inp : CorrectionInput
    tolerance : float
        Stop once consecutive iterates differ by less than ``tolerance * sigma_g``.
    max_iterations : int

    Returns
    -------
    EtaEstimate
        ``converged`` is False if ``max_iterations`` was reached; ``eta`` is then
        the last iterate. ``sigma_g = 0`` returns ``m_hat`` unchanged.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be > 0")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    m, s, n = inp.m_hat, inp.sigma_g, inp.n_dof
    if s == 0.0:
        return EtaEstimate(m, 0, True, False)
    eta = m
    clamped = False
    for it in range(1, max_iterations + 1):
        radicand = m * m + (xi(eta, s, n) - 2.0 * n) * s * s
        clamped = radicand < 0.0
        new = 0.0 if clamped else math.sqrt(radicand)
        if abs(new - eta) < tolerance * s:
            return EtaEstimate(new, it, True, clamped)
        eta = new
    return EtaEstimate(eta, max_iterations, False, clamped)


def _box_mean(data, width):
    """Mean over a clamped ``width``^3 spatial window, volume by volume."""
    h = width // 2
    out = data
    for axis in range(3):
        length = out.shape[axis]
        cs = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(cs, [0], axis=axis))
        cs = np.concatenate([zero, cs], axis=axis)
        idx = np.arange(length)
        hi = np.minimum(idx + h, length - 1) + 1
        lo = np.maximum(idx - h, 0)
        counts = (hi - lo).astype(float)
        shape = [1] * out.ndim
        shape[axis] = length
        out = (np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis)) / counts.reshape(shape)
    return out


def smooth_magnitudes(data, smoothing="none"):
    """First-moment estimate per voxel: the raw value or a clamped box mean.

    ``smoothing`` is ``"none"``, ``"box3"`` or ``"box<w>"`` for an odd width.
    """
    if smoothing in (None, "none"):
        return data
    if isinstance(smoothing, str) and smoothing.startswith("box"):
        width = int(smoothing[3:] or 3)
    else:
        width = int(smoothing)
    if width < 1 or width % 2 == 0:
        raise ValueError(f"smoothing width must be odd and >= 1, got {width}")
    return _box_mean(data, width)


def _field(value, spatial_shape, name):
    arr = np.asarray(value.data if isinstance(value, Volume4D) else value, dtype=float)
    if arr.ndim == 4 and arr.shape[3] == 1:
        arr = arr[..., 0]
    if arr.ndim not in (0, 3) or (arr.ndim == 3 and arr.shape != tuple(spatial_shape)):
        raise ValueError(
            f"{name} has shape {arr.shape}; expected a scalar or {tuple(spatial_shape)}")
    return np.broadcast_to(arr, tuple(spatial_shape))


def correct_volume(volume, sigma, n_dof, smoothing="none", tolerance=DEFAULT_TOLERANCE,
                   max_iterations=DEFAULT_MAX_ITERATIONS, threads=1):
    """Bias-correct every voxel of every volume.

    Parameters
    ----------
    volume : Volume4D
    sigma, n_dof : float or ndarray (X, Y, Z)
        Scalars or spatial fields. Voxels with ``sigma = 0`` pass through
        unchanged; NaN entries (invalid field voxels) produce NaN output.
    smoothing : {"none", "box3"}
        Source of the first-moment estimate.

    Returns
    -------
    CorrectionResult
    """
    data = volume.data
    spatial = data.shape[:3]
    sig = _field(sigma, spatial, "sigma")
    nd = _field(n_dof, spatial, "n_dof")
    if np.any(sig < 0):
        raise ValueError("sigma must be >= 0")
    m_hat = smooth_magnitudes(data, smoothing)
    k = data.shape[3]
    sig4 = np.repeat(sig[..., np.newaxis], k, axis=3).ravel()
    n4 = np.repeat(nd[..., np.newaxis], k, axis=3).ravel()
    flat = m_hat.ravel()
    out = np.full(flat.shape, np.nan)
    ok = np.isfinite(sig4) & np.isfinite(n4) & (n4 > 0)
    eta, iters, conv, clamp = kernels.correct_eta_batch(
        flat[ok], sig4[ok], n4[ok], tolerance, max_iterations, threads=threads)
    out[ok] = eta
    corrected = Volume4D(
        data=out.reshape(data.shape),
        voxel_dims=volume.voxel_dims,
        dtype_origin=volume.dtype_origin,
        header=volume.header,
    )
    return CorrectionResult(
        volume=corrected,
        clamped_count=int(np.count_nonzero(clamp)),
        unconverged_count=int(np.count_nonzero(~conv)),
        max_iterations_used=int(iters.max()) if iters.size else 0,
    )
