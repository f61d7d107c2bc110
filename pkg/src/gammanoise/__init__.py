"""Noise estimation for magnitude MRI through the Gamma change of variable.

Noise-only magnitudes ``m`` with Gaussian SD ``sigma_g`` and ``N`` degrees of
freedom satisfy ``m**2 / (2 sigma_g**2) ~ Gamma(N, 1)``. The package
identifies such voxels automatically, estimates ``(sigma_g, N)`` by moments or
maximum likelihood, builds local noise fields from noise-only acquisitions and
corrects the noncentral chi signal bias.
"""

from .estimators import EstimateResult, Method, PowerSums, SampleSet, estimate
from .kernels import BACKEND
from .volume_io import Volume4D, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EstimateResult",
    "Method",
    "PowerSums",
    "SampleSet",
    "Volume4D",
    "estimate",
    "read_volume",
    "write_volume",
    "__version__",
]
