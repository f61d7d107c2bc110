"""Synthetic magnitude phantoms with known (sigma_g, N) and error evaluation.

Noise model per voxel, for integer N::

    m = sqrt( sum_{i=1..N} (I / sqrt(N) + tau * eps_i)^2 + sum_{j=1..N} (tau * eps_j)^2 )

with ``eps ~ Normal(0, sigma_g^2)`` and ``tau`` a spatial noise profile, so the
noiseless magnitude is exactly ``I`` and the local noise level is
``sigma_g * tau``. Pure-noise phantoms with non-integer N draw
``m = sigma_g tau sqrt(2 t)``, ``t ~ Gamma(N, 1)``.
"""

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .distributions import UnsupportedCombinationError
from .background_id import slice_axis_index
from .volume_io import Volume4D

__all__ = [
    "SignalModel",
    "PhantomSpec",
    "PhantomOutput",
    "ErrorRecord",
    "sigma_from_snr",
    "tau_field",
    "generate",
    "evaluate",
    "slicewise_error",
    "percentage_error",
]

TAU_CENTER = 1.0
TAU_EDGE = 1.75


@dataclass(frozen=True)
class SignalModel:
    """Noiseless signal layout.

    kind : {"uniform", "sphere", "imported"}
        ``uniform`` fills the volume with ``value`` (0 gives noise maps);
        ``sphere`` puts ``inside`` in a centred ball of radius
        ``radius_fraction * min(shape) / 2`` voxels and ``outside`` elsewhere;
        ``imported`` uses ``volume`` (3D, or 4D with K volumes).
    """

    kind: str = "sphere"
    value: float = 0.0
    inside: float = 600.0
    outside: float = 0.0
    radius_fraction: float = 1.0
    volume: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def uniform(cls, value):
        return cls(kind="uniform", value=float(value))

    @classmethod
    def sphere(cls, inside=600.0, outside=0.0, radius_fraction=1.0):
        return cls(kind="sphere", inside=float(inside), outside=float(outside),
                   radius_fraction=float(radius_fraction))

    @classmethod
    def imported(cls, volume):
        return cls(kind="imported", volume=np.asarray(volume, dtype=float))

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "uniform":
            d["value"] = self.value
        elif self.kind == "sphere":
            d.update(inside=self.inside, outside=self.outside,
                     radius_fraction=self.radius_fraction)
        return d


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple = (48, 48, 24)
    k_volumes: int = 65
    signal_model: SignalModel = field(default_factory=SignalModel.sphere)
    snr: float = 30.0
    n_dof: float = 1.0
    tau_profile: str = "stationary"
    seed: int = 0
    # mean signal defining sigma_g = reference_signal / snr; defaults to the
    # mean noiseless value over the object, and is required for noise maps
    reference_signal: float = None

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"shape must be three positive integers, got {self.shape}")
        if self.k_volumes < 1:
            raise ValueError("k_volumes must be >= 1")
        if not self.snr > 0:
            raise ValueError("snr must be > 0")
        if not self.n_dof > 0:
            raise ValueError("n_dof must be > 0")
        if self.tau_profile not in ("stationary", "sphere_ramp"):
            raise ValueError(f"unknown tau profile {self.tau_profile!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        d = asdict(self) if self.signal_model.volume is None else {
            k: getattr(self, k) for k in self.__dataclass_fields__ if k != "signal_model"}
        d["signal_model"] = self.signal_model.to_dict()
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sm = d.pop("signal_model", None)
        if isinstance(sm, dict):
            sm = dict(sm)
            kind = sm.pop("kind", "sphere")
            sm = SignalModel(kind=kind, **sm)
        elif sm is None:
            sm = SignalModel.sphere()
        return cls(signal_model=sm, **d)


@dataclass
class PhantomOutput:
    noisy: Volume4D
    noiseless: Volume4D
    sigma_true: np.ndarray
    n_true: float
    object_mask: np.ndarray
    sigma_g: float
    spec: PhantomSpec = None

    def metadata(self):
        return {"spec": self.spec.to_dict() if self.spec else None,
                "sigma_g": self.sigma_g, "n_dof": self.n_true,
                "seed": None if self.spec is None else int(self.spec.seed)}


def sigma_from_snr(mean_signal, snr):
    """Gaussian noise SD for a given average signal and SNR: ``mean_signal / snr``."""
    if not (mean_signal > 0 and snr > 0):
        raise ValueError("mean_signal and snr must be > 0")
    return mean_signal / snr


def _radial_distance(shape):
    centre = [(s - 1) / 2.0 for s in shape]
    grids = np.meshgrid(*[np.arange(s, dtype=float) - c for s, c in zip(shape, centre)],
                        indexing="ij")
    return np.sqrt(sum(g * g for g in grids)), math.sqrt(sum(c * c for c in centre))


def tau_field(shape, profile="stationary"):
    """Spatial noise multiplier.

    ``sphere_ramp`` grows linearly with the distance from the volume centre,
    from 1 at the centre to 1.75 at the corners (the circumscribed sphere).
    """
    if profile == "stationary":
        return np.ones(shape)
    if profile != "sphere_ramp":
        raise ValueError(f"unknown tau profile {profile!r}")
    r, r_max = _radial_distance(shape)
    if r_max == 0:
        return np.full(shape, TAU_CENTER)
    return TAU_CENTER + (TAU_EDGE - TAU_CENTER) * (r / r_max)


def _signal(spec):
    sm = spec.signal_model
    shape = spec.shape
    if sm.kind == "uniform":
        signal = np.full(shape, sm.value, dtype=float)
        obj = np.full(shape, sm.value != 0)
    elif sm.kind == "sphere":
        r, _ = _radial_distance(shape)
        radius = sm.radius_fraction * min(shape) / 2.0
        obj = r <= radius
        signal = np.where(obj, sm.inside, sm.outside).astype(float)
    elif sm.kind == "imported":
        signal = np.asarray(sm.volume, dtype=float)
        if signal.shape[:3] != shape:
            raise ValueError(f"imported signal has shape {signal.shape}, spec says {shape}")
        obj = (signal if signal.ndim == 3 else signal.max(axis=3)) > 0
    else:
        raise ValueError(f"unknown signal model {sm.kind!r}")
    if signal.ndim == 3:
        signal = np.repeat(signal[..., np.newaxis], spec.k_volumes, axis=3)
    elif signal.shape[3] != spec.k_volumes:
        raise ValueError("imported 4D signal must have k_volumes volumes")
    if np.any(signal < 0):
        raise ValueError("noiseless signal must be nonnegative")
    return signal, obj


def generate(spec):
    """Build a noisy phantom and its ground truth from ``spec``.

    Each volume index draws from its own stream spawned from ``spec.seed``,
    so the output is identical however the volumes are scheduled.

    Raises
    ------
    UnsupportedCombinationError
        Non-integer ``n_dof`` with a nonzero noiseless signal.
    """
    signal, obj = _signal(spec)
    n = float(spec.n_dof)
    integer_n = n == math.floor(n)
    if not integer_n and np.any(signal > 0):
        raise UnsupportedCombinationError(
            f"non-integer n_dof={n} requires a zero noiseless signal (noise maps)")
    if spec.reference_signal is not None:
        mean_signal = float(spec.reference_signal)
    elif np.any(obj):
        mean_signal = float(signal[obj].mean())
    else:
        raise ValueError("reference_signal is required when the phantom has no object")
    sigma_g = sigma_from_snr(mean_signal, spec.snr)
    tau = tau_field(spec.shape, spec.tau_profile)
    sigma_true = sigma_g * tau
    streams = np.random.SeedSequence(int(spec.seed)).spawn(spec.k_volumes)
    noisy = np.empty(signal.shape, dtype=float)
    for k, seq in enumerate(streams):
        rng = np.random.default_rng(seq)
        if integer_n:
            n_int = int(n)
            mean = signal[..., k] / math.sqrt(n_int)
            acc = np.zeros(spec.shape)
            for _ in range(n_int):
                acc += (mean + sigma_true * rng.standard_normal(spec.shape)) ** 2
            for _ in range(n_int):
                acc += (sigma_true * rng.standard_normal(spec.shape)) ** 2
            noisy[..., k] = np.sqrt(acc)
        else:
            noisy[..., k] = sigma_true * np.sqrt(2.0 * rng.standard_gamma(n, size=spec.shape))
    return PhantomOutput(
        noisy=Volume4D(noisy),
        noiseless=Volume4D(signal),
        sigma_true=sigma_true,
        n_true=n,
        object_mask=obj,
        sigma_g=sigma_g,
        spec=spec,
    )


@dataclass
class ErrorRecord:
    """Percentage errors ``100 (estimated - true) / true`` inside a region."""

    errors: np.ndarray  # voxelwise, NaN outside the region or where undefined
    mean: float
    sd: float
    median: float
    voxel_count: int
    per_slice: list  # dicts: slice_index, mean, sd, voxel_count

    def as_dict(self):
        return {"mean": self.mean, "sd": self.sd, "median": self.median,
                "voxel_count": self.voxel_count, "per_slice": self.per_slice}


def percentage_error(estimated, true):
    return 100.0 * (np.asarray(estimated, dtype=float) - true) / true


def _broadcast_estimate(estimated, shape, axis):
    est = np.asarray(estimated if estimated is not None else np.nan, dtype=float)
    if est.ndim == 0:
        return np.full(shape, float(est))
    if est.shape == tuple(shape):
        return est
    if est.ndim == 1:
        if est.size != shape[axis]:
            raise ValueError(
                f"{est.size} per-slice estimates for an axis of length {shape[axis]}")
        view = [1, 1, 1]
        view[axis] = est.size
        return np.broadcast_to(est.reshape(view), shape)
    raise ValueError(f"estimate of shape {est.shape} does not match field {shape}")


def evaluate(estimated_sigma, true_sigma, region_mask, axis="auto"):
    """Voxelwise percentage error of a sigma estimate inside ``region_mask``.

    Parameters
    ----------
    estimated_sigma : float, sequence of per-slice values, or 3D array
        Per-slice values are spread over their slice along ``axis``; ``None``
        or NaN entries (failed slices) are left out of the statistics.
    true_sigma : ndarray (X, Y, Z)
    region_mask : bool ndarray (X, Y, Z)

    Raises
    ------
    ValueError
        If the mask selects no voxel with a defined error.
    """
    true_sigma = np.asarray(true_sigma, dtype=float)
    region_mask = np.asarray(region_mask, dtype=bool)
    if region_mask.shape != true_sigma.shape:
        raise ValueError(f"mask shape {region_mask.shape} != field shape {true_sigma.shape}")
    ax = slice_axis_index(axis)
    if not np.isscalar(estimated_sigma) and np.ndim(estimated_sigma) == 1:
        estimated_sigma = [np.nan if v is None else v for v in estimated_sigma]
    est = _broadcast_estimate(estimated_sigma, true_sigma.shape, ax)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = percentage_error(est, true_sigma)
    use = region_mask & np.isfinite(err)
    if not np.any(use):
        raise ValueError("evaluation region is empty")
    err = np.where(use, err, np.nan)
    values = err[use]
    per_slice = []
    for index in range(true_sigma.shape[ax]):
        sl = np.take(err, index, axis=ax)
        vals = sl[np.isfinite(sl)]
        if vals.size:
            per_slice.append({"slice_index": index, "mean": float(vals.mean()),
                              "sd": float(vals.std()), "voxel_count": int(vals.size)})
    return ErrorRecord(errors=err, mean=float(values.mean()), sd=float(values.std()),
                       median=float(np.median(values)), voxel_count=int(values.size),
                       per_slice=per_slice)


def slicewise_error(per_slice_sigma, true_sigma, axis="auto", region_mask=None):
    """Percentage error of each slice estimate against that slice's mean true sigma.

    Slices without an estimate give NaN.
    """
    true_sigma = np.asarray(true_sigma, dtype=float)
    ax = slice_axis_index(axis)
    out = []
    for index, est in enumerate(per_slice_sigma):
        truth = np.take(true_sigma, index, axis=ax)
        if region_mask is not None:
            truth = truth[np.take(region_mask, index, axis=ax)]
        if est is None or truth.size == 0:
            out.append(np.nan)
            continue
        ref = float(np.mean(truth))
        out.append(100.0 * (float(est) - ref) / ref)
    return np.array(out)
