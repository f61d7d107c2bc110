"""Command-line interface.

Subcommands::

    estimate        per-slice (sigma_g, N) from DWIs with automatic background detection
    estimate-local  voxelwise fields from noise-only acquisitions
    simulate        synthetic phantom with ground truth
    correct         noncentral chi bias correction
    evaluate        percentage error of an estimate against a truth field

Exit status: 0 success, 1 runtime or data error, 2 usage error.
"""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .background_id import (IdentificationConfig, background_mask_volume, identify_volume,
                            slice_axis_index)
from .bias_correction import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, correct_volume
from .estimators import Method
from .kernels import BACKEND
from .local_maps import estimate_field, field_summary
from .phantom import PhantomSpec, SignalModel, evaluate, generate, slicewise_error
from .volume_io import Volume4D, VolumeLoadError, read_report, read_volume, write_report, write_volume

log = logging.getLogger("gammanoise")

THREADS_ENV = "GAMMANOISE_THREADS"


class CliError(Exception):
    """Runtime failure reported with exit status 1."""

    status = 1


class CliUsageError(CliError):
    """Invalid configuration reported with exit status 2."""

    status = 2


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _int_list(text):
    if text is None or text == "":
        return ()
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _window(text):
    sizes = _int_list(text)
    if len(sizes) == 1:
        sizes = sizes * 3
    if len(sizes) != 3 or any(s < 1 or s % 2 == 0 for s in sizes):
        raise argparse.ArgumentTypeError(f"window must be one or three odd sizes, got {text!r}")
    return sizes


def _shape(text):
    sizes = _int_list(text)
    if len(sizes) != 3 or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"shape must be three positive integers, got {text!r}")
    return sizes


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _probability(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {text!r}")
    return value


def _method(text):
    try:
        return Method.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"method must be moments or ml, got {text!r}")


def _load(path):
    try:
        return read_volume(path)
    except FileNotFoundError:
        raise CliError(f"{path}: file not found") from None
    except (VolumeLoadError, OSError) as exc:
        raise CliError(str(exc)) from None


def _scalar_or_volume(text, spatial, name):
    try:
        return float(text)
    except ValueError:
        pass
    vol = _load(text)
    if vol.k_volumes != 1 or vol.spatial_shape != tuple(spatial):
        raise CliError(f"{name} volume {text} has shape {vol.shape}; expected "
                       f"{tuple(spatial)} (one volume)")
    return vol.data[..., 0]


def _run_metadata(command, args, **extra):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    meta = {"tool": "gammanoise", "version": __version__, "command": command,
            "backend": BACKEND, "config": config}
    meta.update(extra)
    return meta


# -- subcommands -------------------------------------------------------------------

def cmd_estimate(args):
    vol = _load(args.input)
    config = IdentificationConfig(
        p=args.p, l=args.grid_length, n_min=args.nmin, n_max=args.nmax,
        max_outer_iterations=args.max_iterations, relative_tolerance=args.tolerance,
        slice_axis=args.axis, exclude_volumes=args.exclude_volumes,
        extend_grid=not args.no_grid_extension)
    results = identify_volume(vol, config, args.method, threads=args.threads)
    ok = [r for r in results if r.error is None]
    for r in results:
        if r.error:
            log.warning("slice %d: %s", r.slice_index, r.error)
    if not ok:
        raise CliError(f"{args.input}: no slice produced an estimate")
    sigmas = [r.estimate.sigma_g for r in ok]
    ns = [r.estimate.n_dof for r in ok]
    summary = {"slices": len(results), "failed": len(results) - len(ok),
               "median_sigma": float(np.median(sigmas)), "median_n_dof": float(np.median(ns))}
    print(f"slices {summary['slices']} failed {summary['failed']} "
          f"median sigma {summary['median_sigma']:.6g} median N {summary['median_n_dof']:.6g}")
    if args.report_out:
        write_report([r.as_record() for r in results], args.report_out,
                     metadata=_run_metadata("estimate", args, summary=summary))
    if args.mask_out:
        mask = background_mask_volume(results, vol.spatial_shape, args.axis)
        write_volume(Volume4D(mask.astype(float), voxel_dims=vol.voxel_dims), args.mask_out,
                     dtype="u8")
    return 0


def cmd_estimate_local(args):
    vol = _load(args.input)
    field = estimate_field(vol, args.window, args.method, threads=args.threads)
    if not np.any(field.valid):
        raise CliError(
            f"no valid window: each window holds {np.prod(args.window) * vol.k_volumes} "
            "samples at most and needs at least 2 non-constant values; "
            "use a larger --window or more volumes")
    summary = field_summary(field)
    print(f"valid voxels {summary.voxel_count} median sigma {summary.sigma['median']:.6g} "
          f"median N {summary.n_dof['median']:.6g}")
    if args.sigma_out:
        write_volume(Volume4D(field.sigma_map, voxel_dims=vol.voxel_dims), args.sigma_out,
                     dtype="f64")
    if args.n_out:
        write_volume(Volume4D(field.n_map, voxel_dims=vol.voxel_dims), args.n_out, dtype="f64")
    if args.report_out:
        write_report([summary.as_dict()], args.report_out, format="json",
                     metadata=_run_metadata("estimate-local", args,
                                            invalid_voxels=int(np.count_nonzero(~field.valid))))
    return 0


def _spec_from_args(args):
    if args.spec:
        try:
            spec_dict = json.loads(Path(args.spec).read_text())
            return PhantomSpec.from_dict(spec_dict)
        except FileNotFoundError:
            raise CliError(f"{args.spec}: file not found") from None
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise CliUsageError(f"{args.spec}: invalid phantom spec ({exc})") from None
    if args.signal == "sphere":
        model = SignalModel.sphere(inside=args.signal_value)
        reference = None
    elif args.signal == "uniform":
        model = SignalModel.uniform(args.signal_value)
        reference = None
    else:
        model = SignalModel.uniform(0.0)
        reference = args.signal_value
    try:
        return PhantomSpec(shape=args.shape, k_volumes=args.k, signal_model=model, snr=args.snr,
                           n_dof=args.n, tau_profile=args.profile, seed=args.seed,
                           reference_signal=reference)
    except ValueError as exc:
        raise CliUsageError(f"invalid phantom spec: {exc}") from None


def cmd_simulate(args):
    spec = _spec_from_args(args)
    try:
        out = generate(spec)
    except ValueError as exc:
        raise CliUsageError(f"invalid phantom spec: {exc}") from None
    prefix = args.out_prefix
    ext = args.ext
    paths = {
        "noisy": f"{prefix}_noisy{ext}",
        "noiseless": f"{prefix}_noiseless{ext}",
        "sigma_true": f"{prefix}_sigma_true{ext}",
        "mask": f"{prefix}_mask{ext}",
    }
    Path(paths["noisy"]).parent.mkdir(parents=True, exist_ok=True)
    write_volume(out.noisy, paths["noisy"], dtype=args.dtype)
    write_volume(out.noiseless, paths["noiseless"], dtype=args.dtype)
    write_volume(Volume4D(out.sigma_true), paths["sigma_true"], dtype="f64")
    write_volume(Volume4D(out.object_mask.astype(float)), paths["mask"], dtype="u8")
    meta = out.metadata()
    meta.update(tool="gammanoise", version=__version__, files=paths)
    meta_path = Path(f"{prefix}_meta.json")
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    print(f"sigma_g {out.sigma_g:.6g} N {out.n_true:g} seed {spec.seed} -> {prefix}_*")
    return 0


def cmd_correct(args):
    vol = _load(args.input)
    sigma = _scalar_or_volume(args.sigma, vol.spatial_shape, "sigma")
    n_dof = _scalar_or_volume(args.n, vol.spatial_shape, "n")
    if np.isscalar(sigma) and sigma < 0:
        raise CliError("--sigma must be >= 0")
    if np.isscalar(n_dof) and not n_dof > 0:
        raise CliError("--n must be > 0")
    try:
        res = correct_volume(vol, sigma, n_dof, smoothing=args.smooth, tolerance=args.tolerance,
                             max_iterations=args.max_iterations, threads=args.threads)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    write_volume(res.volume, args.out, dtype=args.dtype)
    print(f"clamped to noise floor {res.clamped_count} unconverged {res.unconverged_count}")
    if args.report_out:
        write_report([{"clamped_count": res.clamped_count,
                       "unconverged_count": res.unconverged_count,
                       "max_iterations_used": res.max_iterations_used}],
                     args.report_out, format="json", metadata=_run_metadata("correct", args))
    return 0


def _estimate_from_file(path, spatial, axis):
    path = Path(path)
    if path.suffix.lower() in (".json", ".csv"):
        try:
            meta, records = read_report(path)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"{path}: cannot read report ({exc})") from None
        cfg = (meta or {}).get("config", {}) if isinstance(meta, dict) else {}
        axis = cfg.get("axis", axis) if axis is None else axis
        axis = axis or "auto"
        length = spatial[slice_axis_index(axis)]
        per_slice = [None] * length
        for rec in records:
            idx = rec.get("slice_index")
            if idx is not None and 0 <= idx < length:
                per_slice[idx] = rec.get("sigma")
        return per_slice, axis
    vol = _load(path)
    if vol.k_volumes != 1 or vol.spatial_shape != tuple(spatial):
        raise CliError(f"estimate volume {path} has shape {vol.shape}; expected {tuple(spatial)}")
    return vol.data[..., 0], axis or "auto"


def cmd_evaluate(args):
    truth = _load(args.truth)
    if truth.k_volumes != 1:
        raise CliError(f"truth field {args.truth} must be 3D, got shape {truth.shape}")
    true_sigma = truth.data[..., 0]
    if args.mask:
        mvol = _load(args.mask)
        if mvol.spatial_shape != truth.spatial_shape:
            raise CliError(f"mask shape {mvol.spatial_shape} != truth shape {truth.spatial_shape}")
        mask = mvol.data[..., 0] > 0
    else:
        mask = np.ones(truth.spatial_shape, dtype=bool)
    estimated, axis = _estimate_from_file(args.estimate, truth.spatial_shape, args.axis)
    try:
        record = evaluate(estimated, true_sigma, mask, axis)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    doc = {"metadata": _run_metadata("evaluate", args), "voxelwise": record.as_dict()}
    if isinstance(estimated, list):
        errs = slicewise_error(estimated, true_sigma, axis)
        finite = errs[np.isfinite(errs)]
        doc["slicewise"] = {
            "errors": [None if not np.isfinite(e) else float(e) for e in errs],
            "mean_abs": float(np.mean(np.abs(finite))) if finite.size else None,
            "median": float(np.median(finite)) if finite.size else None,
        }
    print(f"mean error {record.mean:.4g}% sd {record.sd:.4g}% median {record.median:.4g}% "
          f"over {record.voxel_count} voxels")
    if args.out:
        text = json.dumps(doc, indent=2) + "\n"
        tmp = Path(args.out + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, args.out)
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="gammanoise", description=__doc__.split("\n")[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False, formatter_class=fmt)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker threads; ${THREADS_ENV} overrides the default")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], formatter_class=fmt,
                       help="per-slice sigma_g and N from DWIs")
    p.add_argument("input", help="4D magnitude volume")
    p.add_argument("--p", type=_probability, default=0.05, help="rejection probability")
    p.add_argument("--grid-length", type=int, default=50, help="initial sigma grid size l")
    p.add_argument("--nmin", type=_positive_float, default=1.0, help="smallest N searched")
    p.add_argument("--nmax", type=_positive_float, default=12.0, help="largest N searched")
    p.add_argument("--axis", choices=["auto", "x", "y", "z"], default="auto",
                   help="slice axis (auto = z)")
    p.add_argument("--method", type=_method, default="moments",
                   help="estimator: moments or ml")
    p.add_argument("--exclude-volumes", type=_int_list, default=(),
                   help="comma-separated volume indices to ignore")
    p.add_argument("--max-iterations", type=int, default=100, help="outer iteration cap")
    p.add_argument("--tolerance", type=_positive_float, default=1e-4,
                   help="relative change in sigma and N for convergence")
    p.add_argument("--no-grid-extension", action="store_true",
                   help="never widen the initial sigma grid")
    p.add_argument("--mask-out", help="write the background mask volume here")
    p.add_argument("--report-out", help="per-slice report (.json or .csv)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("estimate-local", parents=[common], formatter_class=fmt,
                       help="voxelwise fields from noise-only acquisitions")
    p.add_argument("input", help="noise-only volume (3D counts as one volume)")
    p.add_argument("--window", type=_window, default="3",
                   help="odd window size, one value or x,y,z")
    p.add_argument("--method", type=_method, default="moments",
                   help="estimator: moments or ml")
    p.add_argument("--sigma-out", help="write the sigma_g field here")
    p.add_argument("--n-out", help="write the N field here")
    p.add_argument("--report-out", help="summary report (.json)")
    p.set_defaults(func=cmd_estimate_local)

    p = sub.add_parser("simulate", parents=[common], formatter_class=fmt,
                       help="synthetic phantom with ground truth")
    p.add_argument("--spec", help="phantom spec JSON; overrides the flags below")
    p.add_argument("--shape", type=_shape, default=(48, 48, 24), help="x,y,z voxels")
    p.add_argument("--k", type=int, default=65, help="number of volumes")
    p.add_argument("--snr", type=_positive_float, default=30.0, help="mean signal / sigma_g")
    p.add_argument("--n", type=_positive_float, default=1.0, help="degrees of freedom N")
    p.add_argument("--profile", choices=["stationary", "sphere_ramp"], default="stationary",
                   help="spatial noise profile")
    p.add_argument("--signal", choices=["sphere", "uniform", "noise"], default="sphere",
                   help="noiseless object; noise gives pure noise maps")
    p.add_argument("--signal-value", type=float, default=600.0,
                   help="object intensity (reference signal for noise maps)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32", help="stored precision")
    p.add_argument("--ext", choices=[".nii", ".nii.gz", ".raw"], default=".nii.gz",
                   help="output format")
    p.add_argument("--out-prefix", required=True, help="output path prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correct", parents=[common], formatter_class=fmt,
                       help="noncentral chi bias correction")
    p.add_argument("input", help="4D magnitude volume")
    p.add_argument("--sigma", required=True, help="sigma_g as a number or a 3D volume")
    p.add_argument("--n", required=True, help="N as a number or a 3D volume")
    p.add_argument("--smooth", choices=["none", "box3"], default="none",
                   help="first-moment estimate: raw value or 3x3x3 box mean")
    p.add_argument("--tolerance", type=_positive_float, default=DEFAULT_TOLERANCE,
                   help="fixed-point tolerance in units of sigma_g")
    p.add_argument("--max-iterations", type=int, default=DEFAULT_MAX_ITERATIONS,
                   help="fixed-point iteration cap")
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32", help="stored precision")
    p.add_argument("--out", required=True, help="corrected volume")
    p.add_argument("--report-out", help="correction diagnostics (.json)")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("evaluate", parents=[common], formatter_class=fmt,
                       help="percentage error against a truth field")
    p.add_argument("--estimate", required=True, help="per-slice report or sigma field volume")
    p.add_argument("--truth", required=True, help="true sigma field volume")
    p.add_argument("--mask", help="region mask volume; omit to use the whole volume")
    p.add_argument("--axis", choices=["auto", "x", "y", "z"], default=None,
                   help="slice axis; omit to use the one stored in the report")
    p.add_argument("--out", help="summary JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
