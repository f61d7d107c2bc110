"""Automatic identification of noise-only voxels, slice by slice.

Within one slice position every voxel of every volume is assumed to share the
same noise distribution. Summing ``t = m^2 / (2 sigma^2)`` over the K volumes
gives ``Gamma(K N, 1)`` for background voxels; voxels whose sum falls outside
the central ``1 - p`` interval of that distribution are rejected. A grid of
candidate sigma values is scanned, the candidate keeping the most voxels wins,
(sigma_g, N) is re-estimated from the kept voxels and the grid is narrowed
around the new estimate until both parameters settle.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from . import specfun
from .estimators import (DegenerateSampleError, EstimateResult, Method, PowerSums,
                         estimate_from_sums)
from .volume_io import Volume4D

__all__ = [
    "IdentificationConfig",
    "SliceResult",
    "NoBackgroundError",
    "DegenerateInputError",
    "sigma_upper_bound",
    "selection_bounds",
    "select_background",
    "identify_slice",
    "identify_volume",
    "slice_axis_index",
    "MIN_BACKGROUND_VOXELS",
]

MIN_BACKGROUND_VOXELS = 100
REFINE_STEPS = 11
MAX_GRID_EXTENSIONS = 10


class NoBackgroundError(RuntimeError):
    """No usable set of noise-only voxels was found in a slice."""


class DegenerateInputError(ValueError):
    """The input cannot define a search range (for example an all-zero volume)."""


@dataclass(frozen=True)
class IdentificationConfig:
    p: float = 0.05
    l: int = 50
    n_min: float = 1.0
    n_max: float = 12.0
    max_outer_iterations: int = 100
    relative_tolerance: float = 1e-4
    slice_axis: str = "auto"
    exclude_volumes: tuple = ()
    min_voxels: int = MIN_BACKGROUND_VOXELS
    extend_grid: bool = True

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if self.l < 2:
            raise ValueError(f"l must be >= 2, got {self.l}")
        if not 0.0 < self.n_min <= self.n_max:
            raise ValueError(f"need 0 < n_min <= n_max, got {self.n_min}, {self.n_max}")
        if self.slice_axis not in ("x", "y", "z", "auto", 0, 1, 2):
            raise ValueError(f"slice_axis must be x, y, z or auto, got {self.slice_axis!r}")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        object.__setattr__(self, "exclude_volumes", tuple(int(k) for k in self.exclude_volumes))


@dataclass
class SliceResult:
    slice_index: int
    estimate: EstimateResult = None
    mask: np.ndarray = field(default=None, repr=False)
    rejected_count: int = 0
    outer_iterations: int = 0
    converged: bool = False
    error: str = None

    @property
    def voxel_count(self):
        return 0 if self.mask is None else int(np.count_nonzero(self.mask))

    def as_record(self):
        est = self.estimate
        return {
            "slice_index": self.slice_index,
            "sigma": None if est is None else est.sigma_g,
            "n_dof": None if est is None else est.n_dof,
            "voxel_count": self.voxel_count,
            "converged": bool(self.converged),
            "method": None if est is None else est.method.value,
            "rejected_count": self.rejected_count,
            "outer_iterations": self.outer_iterations,
            "error": self.error,
        }


def sigma_upper_bound(volume_median, n_max):
    """Top of the initial sigma search grid, ``median / sqrt(2 icdf(N_max, 1/2))``."""
    if not volume_median > 0:
        raise DegenerateInputError(
            f"median of the data is {volume_median}; cannot bound sigma_g")
    return volume_median / math.sqrt(2.0 * specfun.inv_reg_inc_gamma_p(n_max, 0.5))


def selection_bounds(k_volumes, n_dof, p, n_dof_upper=None):
    """Central ``1 - p`` interval of Gamma(K N, 1), the law of the summed ``t`` values.

    With ``n_dof_upper`` the lower bound uses ``K * n_dof`` and the upper bound
    ``K * n_dof_upper``, covering every N in between.
    """
    if k_volumes < 1:
        raise ValueError("k_volumes must be >= 1")
    upper_n = n_dof if n_dof_upper is None else n_dof_upper
    lam_minus = specfun.inv_reg_inc_gamma_p(k_volumes * n_dof, p / 2.0)
    lam_plus = specfun.inv_reg_inc_gamma_p(k_volumes * upper_n, 1.0 - p / 2.0)
    return lam_minus, lam_plus


def _sum_bounds(sigma, lam_minus, lam_plus):
    # predicate lam- <= sum(m^2) / (2 sigma^2) <= lam+, expressed on sum(m^2)
    two_s2 = 2.0 * sigma * sigma
    return two_s2 * lam_minus, two_s2 * lam_plus


def select_background(stack, sigma_candidate, n_dof, p):
    """Boolean mask of voxels whose summed ``t`` lies inside the Gamma(K N, 1) interval.

    Parameters
    ----------
    stack : ndarray, shape (..., K)
        Magnitudes of one slice (or any voxel set) over the K volumes.
    """
    stack = np.asarray(stack, dtype=float)
    if not sigma_candidate > 0:
        raise ValueError("sigma_candidate must be > 0")
    k = stack.shape[-1]
    lam_minus, lam_plus = selection_bounds(k, n_dof, p)
    if math.isinf(sigma_candidate):
        return np.zeros(stack.shape[:-1], dtype=bool)
    sumsq = np.sum(stack * stack, axis=-1)
    lo, hi = _sum_bounds(sigma_candidate, lam_minus, lam_plus)
    return (sumsq >= lo) & (sumsq <= hi)


def slice_axis_index(axis):
    if axis in ("auto", "z", 2):
        return 2
    return {"x": 0, "y": 1, 0: 0, 1: 1}[axis]


class _SliceData:
    """Per-voxel sums of one slice, computed once and reused by every scan."""

    def __init__(self, stack):
        # stack: (n_voxels, K)
        m2 = stack * stack
        self.sumsq = m2.sum(axis=1)
        self.valid = self.sumsq > 0
        self.k = stack.shape[1]
        self.sum_m = stack.sum(axis=1)
        self.sum_m4 = (m2 * m2).sum(axis=1)
        with np.errstate(divide="ignore"):
            logs = np.where(m2 > 0, np.log(np.where(m2 > 0, m2, 1.0)), 0.0)
        self.sum_log = logs.sum(axis=1)
        self.n_pos = np.count_nonzero(m2 > 0, axis=1)
        self.sorted_sumsq = np.sort(self.sumsq[self.valid])

    def counts(self, grid, lam_minus, lam_plus):
        """Mask size per candidate, and the number of voxels darker than the interval."""
        lo, hi = _sum_bounds(np.asarray(grid), lam_minus, lam_plus)
        s = self.sorted_sumsq
        below = np.searchsorted(s, lo, side="left")
        return np.searchsorted(s, hi, side="right") - below, below

    def mask(self, sigma, lam_minus, lam_plus):
        lo, hi = _sum_bounds(sigma, lam_minus, lam_plus)
        return self.valid & (self.sumsq >= lo) & (self.sumsq <= hi)

    def sums(self, mask):
        n = int(np.count_nonzero(mask))
        return PowerSums(
            count=n * self.k,
            sum_m=float(np.sum(self.sum_m[mask])),
            sum_m2=float(np.sum(self.sumsq[mask])),
            sum_m4=float(np.sum(self.sum_m4[mask])),
            sum_log_m2=float(np.sum(self.sum_log[mask])),
            n_positive=int(np.sum(self.n_pos[mask])),
        )


def _best_candidate(counts, below=None, p=None, min_voxels=0):
    """Index and size of the largest mask; ties go to the smallest sigma.

    With ``below`` given, candidates leaving many voxels darker than their
    lower bound are skipped: every voxel has E[sum m^2] >= 2 K N sigma^2, so
    the noise floor is the darkest population and a mask with a large darker
    population beneath it has captured signal instead.
    """
    counts = np.asarray(counts)
    if below is not None:
        limit = np.maximum(min_voxels, p * counts)
        eligible = below < limit
        if np.any(eligible & (counts > 0)):
            counts = np.where(eligible, counts, -1)
    best = int(np.argmax(counts))
    return best, max(int(counts[best]), 0)


def _relative_change(new, old):
    return abs(new - old) / abs(old) if old else math.inf


def _slice_stack(data, slice_index, axis, keep_volumes):
    sl = np.take(data, slice_index, axis=axis)
    if keep_volumes is not None:
        sl = sl[..., keep_volumes]
    return sl


def _kept_volumes(k, exclude):
    if not exclude:
        return None
    keep = [i for i in range(k) if i not in set(exclude)]
    if not keep:
        raise ValueError("all volumes excluded")
    return keep


def identify_slice(volume, slice_index, config=None, method=Method.MOMENTS, median=None):
    """Identify the noise-only voxels of one slice and estimate (sigma_g, N) from them.

    Parameters
    ----------
    volume : Volume4D or ndarray (X, Y, Z, K)
    slice_index : int
        Position along ``config.slice_axis``.
    config : IdentificationConfig, optional
    method : Method or str
        Estimator applied to the selected voxels.
    median : float, optional
        Median of the whole dataset; computed here when not supplied.

    Returns
    -------
    SliceResult

    Raises
    ------
    NoBackgroundError
        If the best mask holds fewer than ``config.min_voxels`` voxels.
    """
    config = config or IdentificationConfig()
    method = Method.parse(method)
    data = volume.data if isinstance(volume, Volume4D) else np.asarray(volume, dtype=float)
    if data.ndim == 3:
        data = data[..., np.newaxis]
    axis = slice_axis_index(config.slice_axis)
    if not 0 <= slice_index < data.shape[axis]:
        raise IndexError(f"slice {slice_index} outside axis of length {data.shape[axis]}")
    keep = _kept_volumes(data.shape[3], config.exclude_volumes)
    if median is None:
        median = float(np.median(data if keep is None else data[..., keep]))
    stack = _slice_stack(data, slice_index, axis, keep)
    plane_shape = stack.shape[:2]
    sd = _SliceData(stack.reshape(-1, stack.shape[-1]))
    k = sd.k

    sigma_max = sigma_upper_bound(median, config.n_max)
    grid = sigma_max * np.arange(1, config.l + 1) / config.l
    n_lo, n_hi = config.n_min, config.n_max
    previous = None
    seen = set()
    result = None
    best_sigma = None
    converged = False

    for outer in range(1, config.max_outer_iterations + 1):
        lam_minus, lam_plus = selection_bounds(k, n_lo, config.p, n_dof_upper=n_hi)
        counts, below = sd.counts(grid, lam_minus, lam_plus)
        if outer == 1:
            # the first interval spans every N in [n_min, n_max] and is wide
            # enough to swallow a homogeneous bright region
            best, n_best = _best_candidate(counts, below, config.p, config.min_voxels)
            extensions = 0
            # the median-based bound sits below the noise level when background
            # dominates the data; widen until the maximum is interior
            while (config.extend_grid and (n_best < config.min_voxels or best == len(grid) - 1)
                   and extensions < MAX_GRID_EXTENSIONS):
                sigma_max *= 2.0
                grid = sigma_max * np.arange(1, config.l + 1) / config.l
                counts, below = sd.counts(grid, lam_minus, lam_plus)
                best, n_best = _best_candidate(counts, below, config.p, config.min_voxels)
                extensions += 1
        else:
            best, n_best = _best_candidate(counts)
        if n_best < config.min_voxels:
            raise NoBackgroundError(
                f"slice {slice_index}: largest background mask has {n_best} voxels "
                f"(< {config.min_voxels})")
        best_sigma = float(grid[best])
        mask = sd.mask(best_sigma, lam_minus, lam_plus)
        try:
            result = estimate_from_sums(sd.sums(mask), method)
        except DegenerateSampleError as exc:
            raise NoBackgroundError(f"slice {slice_index}: {exc}") from exc

        current = (result.sigma_g, result.n_dof)
        if previous is not None and all(
                _relative_change(c, p) < config.relative_tolerance
                for c, p in zip(current, previous)):
            converged = True
            break
        if current in seen:
            # the update is deterministic, so a revisited state means a cycle
            # between masks; further iterations cannot converge
            break
        seen.add(current)
        previous = current
        n_lo = n_hi = result.n_dof
        if outer == 1:
            # the first estimate may come from a bright homogeneous region; cap
            # N at n_max so such a region falls outside the refined interval
            n_lo = n_hi = min(result.n_dof, config.n_max)
        grid = result.sigma_g * np.linspace(0.95, 1.05, REFINE_STEPS)

    rejected = int(np.count_nonzero(sd.valid & ~mask))
    return SliceResult(
        slice_index=slice_index,
        estimate=result,
        mask=mask.reshape(plane_shape),
        rejected_count=rejected,
        outer_iterations=outer,
        converged=converged and result.converged,
    )


def identify_volume(volume, config=None, method=Method.MOMENTS, threads=1):
    """Run :func:`identify_slice` on every slice along the configured axis.

    Failures are captured per slice (``SliceResult.error``) rather than
    aborting the run. Results are returned in slice order regardless of the
    number of worker threads.
    """
    config = config or IdentificationConfig()
    data = volume.data if isinstance(volume, Volume4D) else np.asarray(volume, dtype=float)
    if data.ndim == 3:
        data = data[..., np.newaxis]
    if data.size == 0:
        raise DegenerateInputError("empty volume")
    axis = slice_axis_index(config.slice_axis)
    keep = _kept_volumes(data.shape[3], config.exclude_volumes)
    median = float(np.median(data if keep is None else data[..., keep]))
    if not median > 0:
        raise DegenerateInputError(f"median of the data is {median}; cannot bound sigma_g")

    def run(index):
        try:
            return identify_slice(data, index, config, method, median=median)
        except (NoBackgroundError, DegenerateInputError) as exc:
            plane = np.take(data[..., :1], index, axis=axis)[..., 0]
            return SliceResult(slice_index=index, mask=np.zeros(plane.shape, dtype=bool),
                               error=str(exc))

    indices = range(data.shape[axis])
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, indices))
    return [run(i) for i in indices]


def background_mask_volume(results, spatial_shape, axis="auto"):
    """Assemble per-slice masks into a 3D boolean volume."""
    ax = slice_axis_index(axis)
    out = np.zeros(spatial_shape, dtype=bool)
    for res in results:
        if res.mask is None:
            continue
        index = [slice(None)] * 3
        index[ax] = res.slice_index
        out[tuple(index)] = res.mask
    return out
