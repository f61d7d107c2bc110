"""Compare the compiled and numpy kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--voxels 200000] [--sets 20000] [--repeat 3]

Prints the best wall time per backend, the speed-up and the largest
difference between the two outputs.
"""

import argparse
import time

import numpy as np

from gammanoise import distributions as d
from gammanoise import kernels


def correction_inputs(voxels, rng):
    sigma = rng.uniform(5.0, 25.0, voxels)
    n_dof = rng.choice([1.0, 2.0, 4.0, 8.0, 12.0], voxels)
    eta = sigma * rng.exponential(3.0, voxels)
    m_hat = np.array([d.ncchi_mean(d.NcChiParams(e, s, n))
                      for e, s, n in zip(eta[:500], sigma[:500], n_dof[:500])])
    m_hat = np.resize(m_hat, voxels) * rng.uniform(0.9, 1.1, voxels)
    return m_hat, sigma, n_dof


def ml_inputs(sets, rng, size=33):
    m = rng.rayleigh(10.0, (sets, size))
    m2 = m * m
    return (np.full(sets, float(size)), m.sum(axis=1), m2.sum(axis=1),
            np.log(m2).sum(axis=1), np.full(sets, float(size)))


def best_time(func, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        out = func()
        best = min(best, time.perf_counter() - start)
    return best, out


def run(name, func, backends, repeat):
    times, outputs = {}, {}
    for backend in backends:
        times[backend], outputs[backend] = best_time(lambda: func(backend), repeat)
    line = f"{name:<18}" + "".join(f"{b} {t:8.3f} s   " for b, t in times.items())
    if len(backends) == 2:
        a, b = (outputs[k][0] for k in backends)
        finite = np.isfinite(a) & np.isfinite(b)
        diff = float(np.max(np.abs(a[finite] - b[finite]))) if finite.any() else 0.0
        line += f"speed-up {times['python'] / times['cython']:6.1f}x   max |diff| {diff:.1e}"
    print(line)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--voxels", type=int, default=200_000, help="voxels for bias correction")
    parser.add_argument("--sets", type=int, default=20_000, help="sample sets for ML fits")
    parser.add_argument("--repeat", type=int, default=3, help="timed repetitions per backend")
    parser.add_argument("--threads", type=int, default=1, help="worker threads")
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    m_hat, sigma, n_dof = correction_inputs(args.voxels, rng)
    run("correct_eta_batch",
        lambda b: kernels.correct_eta_batch(m_hat, sigma, n_dof, threads=args.threads, backend=b),
        backends, args.repeat)
    cols = ml_inputs(args.sets, rng)
    run("ml_batch", lambda b: kernels.ml_batch(*cols, threads=args.threads, backend=b),
        backends, args.repeat)


if __name__ == "__main__":
    main()
