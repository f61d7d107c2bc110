"""Backend selection for the batch kernels.

The compiled extension is used when it imports; set ``GAMMANOISE_PURE=1`` to
force the numpy fallback. ``BACKEND`` names the active implementation.
"""

from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np

from . import _pykernels

__all__ = ["BACKEND", "correct_eta_batch", "ml_batch", "get_backend", "available_backends"]


def _load_compiled():
    if os.environ.get("GAMMANOISE_PURE", "").strip() not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name=None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _chunked(func, arrays, threads):
    size = arrays[0].size
    if threads <= 1 or size < 2 * threads:
        return func(*arrays)
    bounds = np.linspace(0, size, threads + 1).astype(int)
    parts = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    # the compiled loops release the GIL, so threads run in parallel
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda p: func(*p), parts))
    return tuple(np.concatenate(col) for col in zip(*results))


def correct_eta_batch(m_hat, sigma, n_dof, tolerance=1e-6, max_iterations=500,
                      threads=1, backend=None):
    """Voxelwise bias correction; see :func:`bias_correction.correct_eta`.

    Returns ``(eta, iterations, converged, clamped)`` as 1D arrays.
    """
    impl = get_backend(backend)
    arrays = [np.ascontiguousarray(np.ravel(a), dtype=float) for a in (m_hat, sigma, n_dof)]
    return _chunked(lambda m, s, n: impl.correct_eta_batch(m, s, n, tolerance, max_iterations),
                    arrays, threads)


def ml_batch(count, sum_m, sum_m2, sum_log_m2, n_positive, threads=1, backend=None):
    """Per-set maximum-likelihood fits. Returns ``(sigma, n_dof, valid, converged)``."""
    impl = get_backend(backend)
    arrays = [np.ascontiguousarray(np.ravel(a), dtype=float)
              for a in (count, sum_m, sum_m2, sum_log_m2, n_positive)]
    return _chunked(impl.ml_batch, arrays, threads)
