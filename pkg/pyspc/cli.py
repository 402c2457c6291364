"""Command line interface: ``pyspc <command> ...``.

Exit codes are 0 on success, 2 for usage, configuration and input file errors and 3
for numerical failures during a run.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .codes import (
    SCHEMES,
    TEMPLATE_SOURCES,
    load_matrix,
    make_coding_matrix,
    save_matrix,
    save_matrix_csv,
)
from .config import ConfigError, read_config
from .core import InvalidParameterError, inf, load_irf, make_gaussian_irf
from .evaluation import (
    BASELINES,
    NOISE_MODES,
    Scheme,
    SweepConfig,
    make_baseline_schemes,
    plot_sweep,
    run_sweep,
    summarize,
)
from .evaluation.figures import plot_budget
from .evaluation.pulsed import PULSED_MODES, pulsed_illumination
from .optimisation import (
    ENERGY_MODES,
    INIT_CODES,
    NOISE_MODES as TRAINING_NOISE_MODES,
    OptConfig,
    TrainingDivergedError,
    check_constraints,
    load_bundle,
    save_bundle,
    train,
)
from .profiler import NullProfiler, Profiler
from .quantisation import budget_sweep, parse_budget_range
from .scenes import (
    PRESETS,
    decode_cube,
    export_maps,
    load_cube,
    load_cube_h5,
    make_preset,
    read_map_csv,
    save_cube,
    save_cube_h5,
    synth_cube,
    write_map_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3

DEFAULT_PULSED_MODE = "clip"

H5_EXTENSIONS = (".h5", ".hdf5")


def _add_irf_arguments(parser, n_default=1024):
    group = parser.add_argument_group("impulse response")
    group.add_argument("--n", type=int, default=n_default, help="Number of time bins N.")
    group.add_argument(
        "--sigma", type=float, default=1.0, help="Gaussian IRF width in bins."
    )
    group.add_argument(
        "--irf-file", default=None, help="Tabulated IRF (CSV or SPCV); overrides --sigma."
    )
    group.add_argument(
        "--dt-ps", type=float, default=None, help="Bin width in picoseconds."
    )


def _add_scheme_arguments(parser):
    parser.add_argument("--k", type=int, default=8, help="Number of coded values K.")
    parser.add_argument(
        "--p-factor", type=float, default=inf, help="Peak power factor (default inf)."
    )
    parser.add_argument(
        "--pulsed-mode",
        choices=PULSED_MODES,
        default=None,
        help="Pulsed baseline mode (default: the energy mode of the first bundle, else clip).",
    )
    parser.add_argument(
        "--template-source",
        choices=TEMPLATE_SOURCES,
        default=None,
        help="Decode template waveform (baselines default to shape, bundles to irf).",
    )


def build_parser() -> tuple:
    """The argument parser and the leaf parsers that `--config` defaults apply to."""
    parser = argparse.ArgumentParser(
        prog="pyspc", description="Coded single-photon depth imaging toolkit."
    )
    parser.add_argument("--version", action="version", version=f"pyspc {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug output.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only.")
    parser.add_argument(
        "--threads", type=int, default=None, help="Worker threads (default $SPC_THREADS or 1)."
    )
    parser.add_argument("--config", default=None, help="key = value file of default flags.")
    parser.add_argument("--profile", default=None, help="Write phase timings to this CSV.")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    leaves = []

    p = subparsers.add_parser("gen-codes", help="Write a baseline coding matrix.")
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--out", required=True, help="Output SPCM file.")
    p.add_argument("--csv", default=None, help="Also write the rows to this CSV file.")
    p.set_defaults(func=cmd_gen_codes)
    leaves.append(p)

    p = subparsers.add_parser("optimize", help="Jointly optimise illumination and codes.")
    _add_irf_arguments(p, n_default=None)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--p-factor", type=float, default=inf)
    p.add_argument("--phi-sig", type=float, default=1000.0, help="Training photon count.")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None, help="Step size of the coding matrix.")
    p.add_argument("--drive-lr", type=float, default=None, help="Step size of the log drive.")
    p.add_argument("--lr-decay", type=float, default=0.35)
    p.add_argument("--tv-weight", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=None, help="Softargmax temperature.")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--labels", type=int, default=4096)
    p.add_argument("--sbr-train", type=float, nargs="+", default=[0.5, 1.0, 5.0])
    p.add_argument("--noise", choices=TRAINING_NOISE_MODES, default="gaussian")
    p.add_argument("--init-codes", choices=INIT_CODES, default="fourier")
    p.add_argument(
        "--energy-mode",
        choices=ENERGY_MODES,
        default="clip",
        help="Pulsed baseline mode the bundle is compared against.",
    )
    p.add_argument(
        "--validation-labels",
        type=int,
        default=256,
        help="Held-out labels for picking the best epoch (0 keeps the last).",
    )
    p.add_argument(
        "--fixed-illumination",
        action="store_true",
        help="Only optimise the coding matrix.",
    )
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--out", required=True, help="Bundle directory.")
    p.set_defaults(func=cmd_optimize)
    leaves.append(p)

    p = subparsers.add_parser("eval", help="Monte Carlo sweep over photon counts and SBR.")
    p.add_argument(
        "--schemes",
        nargs="+",
        default=list(BASELINES),
        help=f"Baseline names ({', '.join(BASELINES)}) or bundle directories.",
    )
    p.add_argument("--phi-grid", type=float, nargs="+", default=[100.0, 1000.0])
    p.add_argument("--sbr-grid", type=float, nargs="+", default=[1.0])
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=NOISE_MODES, default="poisson")
    _add_irf_arguments(p)
    _add_scheme_arguments(p)
    p.add_argument("--out", required=True, help="Output directory.")
    p.set_defaults(func=cmd_eval)
    leaves.append(p)

    p = subparsers.add_parser("scene", help="Synthesise or decode transient cubes.")
    scene_commands = p.add_subparsers(dest="scene_command", metavar="scene_command")
    scene_commands.required = True

    s = scene_commands.add_parser("synth", help="Synthesise a cube from a preset scene.")
    s.add_argument("--preset", choices=PRESETS, default="staircase")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--phi-sig", type=float, default=1000.0)
    s.add_argument("--sbr", type=float, default=1.0)
    s.add_argument("--scheme", default="fourier", help="Baseline name or bundle directory.")
    _add_irf_arguments(s)
    _add_scheme_arguments(s)
    s.add_argument("--out", required=True, help="Cube file (.spcc, or .h5 for HDF5).")
    s.add_argument("--truth-out", default=None, help="Ground truth depth CSV.")
    s.set_defaults(func=cmd_scene_synth)
    leaves.append(s)

    s = scene_commands.add_parser("decode", help="Decode a cube into depth and error maps.")
    s.add_argument("--cube", required=True)
    s.add_argument("--truth", default=None, help="Ground truth depth CSV.")
    s.add_argument("--scheme", default="fourier", help="Baseline name or bundle directory.")
    s.add_argument("--phi-sig", type=float, default=1000.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--irf-file", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", choices=NOISE_MODES, default="poisson")
    _add_scheme_arguments(s)
    s.add_argument("--out", required=True, help="Prefix of the exported map files.")
    s.set_defaults(func=cmd_scene_decode)
    leaves.append(s)

    p = subparsers.add_parser("quantize", help="Depth error against storage budget.")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--matrix", default=None, help="SPCM coding matrix.")
    source.add_argument("--bundle", default=None, help="Optimised bundle directory.")
    p.add_argument("--bits", default="", help='Bit depths, e.g. "1:64" or "2,4,8".')
    p.add_argument("--coeffs", default="", help='Fourier coefficient counts, e.g. "10:40:10".')
    p.add_argument("--phi-sig", type=float, default=1000.0)
    p.add_argument("--sbr", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=NOISE_MODES, default="poisson")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--irf-file", default=None)
    p.add_argument("--p-factor", type=float, default=inf)
    p.add_argument("--pulsed-mode", choices=PULSED_MODES, default="clip")
    p.add_argument("--out", required=True, help="Output CSV file.")
    p.set_defaults(func=cmd_quantize)
    leaves.append(p)

    return parser, leaves


def _apply_config_defaults(parser, leaves, path):
    """Use the entries of a config file as defaults; explicit flags still win."""
    data = read_config(path)
    known = set()
    for leaf in leaves + [parser]:
        dests = {action.dest for action in leaf._actions}
        values = {
            key.replace("-", "_"): value
            for key, value in data.items()
            if key.replace("-", "_") in dests
        }
        known.update(values)
        leaf.set_defaults(**values)
    unknown = sorted(key for key in data if key.replace("-", "_") not in known)
    if unknown:
        logger.warning(f'Ignoring unknown keys in "{path}": {unknown}.')


def _configure_logging(verbose=False, quiet=False):
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True
    )


def _irf_from_args(args, n=None, bin_size_ps=None):
    dt = bin_size_ps if bin_size_ps is not None else getattr(args, "dt_ps", None)
    if args.irf_file is not None:
        if not os.path.exists(args.irf_file):
            raise FileNotFoundError(f'IRF file "{args.irf_file}" does not exist.')
        irf = load_irf(args.irf_file, bin_size_ps=dt)
        if n is not None and irf.n != n:
            raise InvalidParameterError(f"IRF file has {irf.n} bins, expected N={n}.")
        return irf
    if n is None:
        n = 1024
    return make_gaussian_irf(args.sigma, n, bin_size_ps=1.0 if dt is None else dt)


def _pulsed_mode(args, bundles=()) -> str:
    """`--pulsed-mode`, else the energy mode the first bundle was trained against."""
    if args.pulsed_mode is not None:
        return args.pulsed_mode
    first = next(iter(bundles), None)
    if first is not None:
        return first.config.energy_mode
    return DEFAULT_PULSED_MODE


def _resolve_schemes(names, args, irf, phi_sig) -> tuple:
    """Schemes for baseline names and optimised bundle directories.

    Returns `(schemes, pulsed_mode)` where `pulsed_mode` is the mode the pulsed
    baselines were built with.
    """
    bundles = {}
    for name in names:
        if name in BASELINES or name == "identity":
            continue
        if not os.path.isdir(name):
            raise FileNotFoundError(
                f'Scheme "{name}" is neither a baseline ({", ".join(BASELINES)}) nor a '
                f"bundle directory."
            )
        bundles[name] = load_bundle(name)
    pulsed_mode = _pulsed_mode(args, bundles.values())

    schemes = []
    for name in names:
        if name not in bundles:
            schemes.extend(
                make_baseline_schemes(
                    [name],
                    args.k,
                    irf.n,
                    irf,
                    phi_sig=phi_sig,
                    p_factor=args.p_factor,
                    pulsed_mode=pulsed_mode,
                    template_source=args.template_source or "shape",
                )
            )
        else:
            label = os.path.basename(os.path.normpath(name))
            schemes.append(
                bundles[name].to_scheme(
                    label, phi_sig=phi_sig, template_source=args.template_source
                )
            )
    return schemes, pulsed_mode


def cmd_gen_codes(args, profiler):
    d = make_coding_matrix(args.scheme, args.k, args.n)
    save_matrix(d, args.out)
    if args.csv is not None:
        save_matrix_csv(d, args.csv)
    profiler.checkpoint("generate")
    print(f"{args.scheme} coding matrix: K={d.k} N={d.n}")
    norms = d.row_norms()
    print(f"row norms: min {norms.min():.6g} mean {norms.mean():.6g} max {norms.max():.6g}")
    return EXIT_OK


def cmd_optimize(args, profiler):
    irf = _irf_from_args(args, n=args.n)
    checkpoint_dir = args.checkpoint_dir
    if checkpoint_dir is None:
        checkpoint_dir = os.path.join(args.out, "checkpoint")
    config = OptConfig(
        n=irf.n,
        k=args.k,
        irf=irf,
        p_factor=args.p_factor,
        phi_sig_train=args.phi_sig,
        sbr_train_set=tuple(np.atleast_1d(args.sbr_train)),
        depth_samples_per_batch=args.batch_size,
        n_labels=args.labels,
        lr=args.lr,
        drive_lr=args.drive_lr,
        lr_decay=args.lr_decay,
        epochs=args.epochs,
        tv_weight=args.tv_weight,
        beta_softargmax=args.beta,
        noise_mode=args.noise,
        seed=args.seed,
        init_codes=args.init_codes,
        energy_mode=args.energy_mode,
        validation_labels=args.validation_labels,
        optimise_illumination=not args.fixed_illumination,
        checkpoint_dir=checkpoint_dir,
    )
    profiler.checkpoint("setup")
    bundle = train(config)
    profiler.checkpoint("train")
    save_bundle(bundle, args.out)
    profiler.checkpoint("save")
    report = check_constraints(bundle)
    print(report)
    if config.peak_limited:
        print(f"Clamp active on {bundle.clamp_fraction:.1%} of drive bins.")
    print(f'Bundle written to "{args.out}" (final loss {bundle.loss_trace[-1]:.6g}).')
    return EXIT_OK


def cmd_eval(args, profiler):
    irf = _irf_from_args(args, n=args.n)
    names = [args.schemes] if isinstance(args.schemes, str) else args.schemes
    schemes, pulsed_mode = _resolve_schemes(
        names, args, irf, max(np.atleast_1d(args.phi_grid))
    )
    if pulsed_mode != DEFAULT_PULSED_MODE:
        logger.info(f"Pulsed baselines use the {pulsed_mode} mode.")
    profiler.checkpoint("setup")
    config = SweepConfig(
        schemes,
        args.phi_grid,
        args.sbr_grid,
        trials=args.trials,
        seed=args.seed,
        irf=irf,
        pulsed_mode=pulsed_mode,
        noise=args.noise,
        threads=args.threads,
        dt_ps=args.dt_ps,
    )
    result = run_sweep(config)
    profiler.checkpoint("sweep")
    os.makedirs(args.out, exist_ok=True)
    summarize(result, path=os.path.join(args.out, "sweep.csv"))
    plot_sweep(result, os.path.join(args.out, "sweep.svg"))
    profiler.checkpoint("write")
    print(summarize(result, fmt="table"))
    return EXIT_OK


def _is_h5(path):
    return os.path.splitext(path)[1].lower() in H5_EXTENSIONS


def cmd_scene_synth(args, profiler):
    irf = _irf_from_args(args, n=args.n)
    (scheme,), _ = _resolve_schemes([args.scheme], args, irf, args.phi_sig)
    depth, albedo = make_preset(args.preset, args.size, scheme.n)
    dt = irf.bin_size_ps if args.dt_ps is None else args.dt_ps
    cube = synth_cube(depth, albedo, scheme.illumination, args.phi_sig, args.sbr, dt)
    profiler.checkpoint("synthesise")
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if _is_h5(args.out):
        save_cube_h5(cube, args.out)
    else:
        save_cube(cube, args.out)
    truth_out = args.truth_out
    if truth_out is None:
        truth_out = os.path.splitext(args.out)[0] + "_truth.csv"
    write_map_csv(truth_out, depth)
    profiler.checkpoint("write")
    print(f'Wrote {cube!r} to "{args.out}" and ground truth to "{truth_out}".')
    return EXIT_OK


def cmd_scene_decode(args, profiler):
    if not os.path.exists(args.cube):
        raise FileNotFoundError(f'Cube file "{args.cube}" does not exist.')
    cube = load_cube_h5(args.cube) if _is_h5(args.cube) else load_cube(args.cube)
    irf = _irf_from_args(args, n=cube.n, bin_size_ps=cube.bin_size_ps)
    (scheme,), _ = _resolve_schemes([args.scheme], args, irf, args.phi_sig)
    truth = read_map_csv(args.truth) if args.truth is not None else None
    profiler.checkpoint("load")
    result = decode_cube(
        cube, scheme, seed=args.seed, truth=truth, noise=args.noise, threads=args.threads
    )
    profiler.checkpoint("decode")
    export_maps(result.depth_map, result.error_map, args.out)
    profiler.checkpoint("write")
    for key, value in result.summary().items():
        print(f"{key}: {value}")
    return EXIT_OK


def cmd_quantize(args, profiler):
    if args.bundle is not None:
        bundle = load_bundle(args.bundle)
        scheme = bundle.to_scheme(os.path.basename(os.path.normpath(args.bundle)))
    else:
        if not os.path.exists(args.matrix):
            raise FileNotFoundError(f'Matrix file "{args.matrix}" does not exist.')
        d = load_matrix(args.matrix)
        irf = _irf_from_args(args, n=d.n)
        illumination = pulsed_illumination(
            irf, args.phi_sig, args.p_factor, _pulsed_mode(args)
        )
        scheme = Scheme(d.label, d, illumination)
    bits = parse_budget_range(args.bits) if args.bits else []
    coeffs = parse_budget_range(args.coeffs) if args.coeffs else []
    if not bits and not coeffs:
        raise InvalidParameterError("Give at least one of --bits or --coeffs.")
    profiler.checkpoint("setup")
    df = budget_sweep(
        scheme,
        bits=bits,
        coeffs=coeffs,
        phi_sig=args.phi_sig,
        sbr=args.sbr,
        trials=args.trials,
        seed=args.seed,
        noise=args.noise,
        threads=args.threads,
    )
    profiler.checkpoint("sweep")
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(args.out, index=False, float_format="%.17g", lineterminator="\n")
    plot_budget(df, os.path.splitext(args.out)[0] + ".svg")
    profiler.checkpoint("write")
    print(df.to_string(index=False))
    return EXIT_OK


def main(argv=None) -> int:
    """Run the command line interface, returning the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)

    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("-v", "--verbose", action="store_true")
    pre.add_argument("-q", "--quiet", action="store_true")
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    _configure_logging(known.verbose, known.quiet)

    parser, leaves = build_parser()
    try:
        if known.config is not None:
            _apply_config_defaults(parser, leaves, known.config)
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    except (ConfigError, OSError) as err:
        logger.error(str(err))
        return EXIT_USAGE

    command = args.command
    if command == "scene":
        command = f"scene {args.scene_command}"
    profiler = Profiler(command) if args.profile is not None else NullProfiler()

    try:
        code = args.func(args, profiler)
    except TrainingDivergedError as err:
        logger.error(f"Training diverged: {err}")
        if err.path is not None:
            print(f"Checkpoint: {err.path}")
        return EXIT_FAILURE
    except FloatingPointError as err:
        logger.error(f"Numerical failure: {err}")
        return EXIT_FAILURE
    except (ValueError, OSError) as err:
        logger.error(str(err))
        return EXIT_USAGE

    if args.profile is not None:
        profiler.to_dataframe().to_csv(args.profile, float_format="%.17g")
        logger.info(f'Wrote profile to "{args.profile}".')
    return code


if __name__ == "__main__":
    sys.exit(main())
