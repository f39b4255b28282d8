"""Command-line front end.

Exit codes: 0 success, 1 I/O or parse error, 2 numerical failure (including a
registration that did not converge or mismatched mixture variances), 3 invalid
flags.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are flag
names (``max-iter`` or ``max_iter``).  Top-level keys apply to all
subcommands; a nested object named after a subcommand overrides them for that
subcommand.  Flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, io
from .ocsvm import InfeasibleNuError, SolverError, train
from .optimize import NumericalFailure
from .pointset import (
    DegenerateScaleError,
    PerturbationSpec,
    estimate_scale,
    perturb,
    rotation_error,
    translation_error,
)
from .registration import RegistrationConfig, RegistrationError, svr
from .svgm import gmmerge, svm_to_gmm

log = logging.getLogger("svreg")

EXIT_OK, EXIT_IO, EXIT_NUMERIC, EXIT_FLAGS = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_FLAGS)


def _gamma(text):
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("gamma must be a positive number or 'auto'")
    if not v > 0:
        raise argparse.ArgumentTypeError("gamma must be positive")
    return v


def _fraction(text):
    v = float(text)
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError("fractions must be finite and non-negative")
    return v


def _grid(text):
    """``lo:hi:step`` or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return bench.linear_grid(lo, hi, step)
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")


def _add_svm_flags(p, rounds=True):
    p.add_argument("--nu", type=float, default=0.01, help="one-class SVM nu (default 0.01)")
    p.add_argument("--gamma", type=_gamma, default="auto", help="kernel width or 'auto'")
    if rounds:
        p.add_argument("--anneal", type=float, default=None,
                       help="gamma multiplier per round (default 10 in 2D, 2 in 3D)")
        p.add_argument("--rounds", type=int, default=3, help="maximum annealing rounds")
        p.add_argument("--max-iter", type=int, default=200, help="optimiser iterations per round")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise io.FormatError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise io.FormatError(f"{path}: configuration must be a JSON object")
    return cfg


def _apply_config(sub_parsers, cfg: dict) -> None:
    dests = {name: {a.dest for a in p._actions} - {"help", "config"}
             for name, p in sub_parsers.items()}
    known = set().union(*dests.values())
    shared = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    for key in shared:
        if key not in known:
            raise UsageError(f"unknown configuration key {key!r}")
    for section, values in cfg.items():
        if isinstance(values, dict) and section not in sub_parsers:
            raise UsageError(f"unknown configuration section {section!r}")
    for name, p in sub_parsers.items():
        values = {k: v for k, v in shared.items() if k in dests[name]}
        for key, value in cfg.get(name, {}).items():
            key = key.replace("-", "_")
            if key not in dests[name]:
                raise UsageError(f"unknown configuration key {name}.{key}")
            values[key] = value
        # strings go through the flag's type converter like command-line text
        p.set_defaults(**{k: v if isinstance(v, (str, bool)) or v is None else str(v)
                          for k, v in values.items()})


def build_parser(config: dict = None) -> argparse.ArgumentParser:
    parser = _Parser(prog="svreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="align a model point-set to a scene point-set")
    p.add_argument("model")
    p.add_argument("scene")
    _add_svm_flags(p)
    p.add_argument("--truth", help="ground-truth transform JSON; adds errors to the summary")
    p.add_argument("--translation-threshold", type=float, default=0.5,
                   help="translation bound for the inlier criterion (dataset units)")
    p.add_argument("--out", help="transform/result JSON output")

    p = sub.add_parser("merge", help="merge two aligned mixtures (or point-sets)")
    p.add_argument("x", help="mixture file or point file merged into y")
    p.add_argument("y")
    p.add_argument("--t", type=_fraction, default=1.0, help="merge parameter t >= 0")
    _add_svm_flags(p, rounds=False)
    p.add_argument("--out", required=True)

    p = sub.add_parser("perturb", help="apply occlusion, noise and outliers to a point-set")
    p.add_argument("input")
    p.add_argument("--outliers", type=_fraction, default=0.0)
    p.add_argument("--noise", type=_fraction, default=0.0)
    p.add_argument("--occlude", type=_fraction, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="run a convergence-range or perturbation sweep")
    p.add_argument("kind", choices=bench.KINDS)
    p.add_argument("--source", default="contour",
                   help=f"synthetic set ({', '.join(sorted(bench.GENERATORS))}) or a point file")
    p.add_argument("--n", type=int, default=None, help="number of points")
    p.add_argument("--grid", type=_grid, default=None, help="lo:hi:step or v1,v2,... (use --grid=-1:1:0.1 for negative starts)")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--registrant", choices=("svr", "kde-l2"), default="svr")
    p.add_argument("--rotation", type=float, default=1.0,
                   help="fixed initial rotation for perturbation sweeps (radians)")
    p.add_argument("--workers", type=int, default=1)
    _add_svm_flags(p)
    p.add_argument("--out", required=True, help="records CSV")
    p.add_argument("--summary", help="summary CSV (default <out>_summary.csv)")

    p = sub.add_parser("train", help="train a one-class SVM on a point-set")
    p.add_argument("input")
    _add_svm_flags(p, rounds=False)
    p.add_argument("--out", required=True, help="SVM model file")
    p.add_argument("--svgm", help="also write the mapped mixture here")

    for p in sub.choices.values():
        p.add_argument("--config", help="JSON file of flag defaults")
    if config:
        _apply_config(sub.choices, config)
    return parser


def _config(args) -> RegistrationConfig:
    return RegistrationConfig(nu=args.nu, gamma=args.gamma, anneal=args.anneal,
                              max_rounds=args.rounds, max_iter=args.max_iter)


def _check_inputs(*paths):
    for path in paths:
        if not Path(path).is_file():
            raise FileNotFoundError(f"no such file: {path}")


def _check_outputs(*paths):
    for path in paths:
        if path is not None and not Path(path).resolve().parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {Path(path).parent}")


def cmd_register(args) -> int:
    _check_inputs(args.model, args.scene, *( [args.truth] if args.truth else []))
    _check_outputs(args.out)
    X, Y = io.read_points(args.model), io.read_points(args.scene)
    truth = io.load_transform(args.truth) if args.truth else None
    result = svr(X, Y, _config(args))
    if args.out:
        io.save_result(args.out, result)
    T = result.theta_star
    rot = f"angle={math.degrees(T.rotation):.6f}deg" if T.dim == 2 else \
        "q=(" + ",".join(f"{v:.6f}" for v in T.rotation) + ")"
    parts = [rot, "t=(" + ",".join(f"{v:.6g}" for v in T.translation) + ")",
             f"f={result.final_objective:.6g}", f"rounds={len(result.rounds)}",
             f"converged={'yes' if result.converged else 'no'}"]
    if truth is not None:
        err = rotation_error(T, truth)
        parts.append(f"rot_err={math.degrees(err):.6f}deg")
        parts.append(f"trans_err={translation_error(T, truth):.6g}")
        parts.append("inlier=" + ("yes" if bench.success_criteria(
            T, truth, "inlier", translation_threshold=args.translation_threshold) else "no"))
    print(" ".join(parts))
    return EXIT_OK if result.converged else EXIT_NUMERIC


def _mixture_from(path, args, scene_path):
    if io.is_svgm_file(path):
        return io.load_svgm(path)
    ps = io.read_points(path)
    gamma = args.gamma
    if gamma == "auto":
        s = estimate_scale(io.read_points(scene_path))
        gamma = 1.0 / (2.0 * s * s)
    return svm_to_gmm(train(ps, args.nu, gamma))


def cmd_merge(args) -> int:
    _check_inputs(args.x, args.y)
    _check_outputs(args.out)
    gx = _mixture_from(args.x, args, args.y)
    gy = _mixture_from(args.y, args, args.y)
    try:
        merged = gmmerge(gx, gy, args.t)
    except ValueError as exc:
        print(f"svreg merge: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    io.save_svgm(args.out, merged)
    print(f"components x={len(gx)} y={len(gy)} out={len(merged)}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    _check_inputs(args.input)
    _check_outputs(args.out)
    if args.occlude >= 1:
        raise UsageError("--occlude must be < 1")
    spec = PerturbationSpec(outlier_fraction=args.outliers, noise_fraction=args.noise,
                            occlusion_fraction=args.occlude, seed=args.seed)
    ps = io.read_points(args.input)
    out = perturb(ps, spec)
    io.write_points(args.out, out)
    print(f"points in={len(ps)} out={len(out)}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.source not in bench.GENERATORS:
        _check_inputs(args.source)
    _check_outputs(args.out, args.summary)
    if args.grid is None:
        args.grid = bench.linear_grid(-3.1, 3.1, 0.1) if args.kind == "convergence-range" \
            else [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    reps = args.reps or (1 if args.kind == "convergence-range" else 50)
    if reps < 1 or args.workers < 1:
        raise UsageError("--reps and --workers must be >= 1")
    if args.kind == "occlusion" and max(args.grid) >= 1:
        raise UsageError("occlusion fractions must be < 1")
    cfg = {"nu": args.nu, "gamma": args.gamma, "anneal": args.anneal,
           "max_rounds": args.rounds, "max_iter": args.max_iter}
    spec = bench.ExperimentSpec(kind=args.kind, source=args.source, grid=args.grid,
                                repetitions=reps, seed=args.seed, registrant=args.registrant,
                                config=cfg, n_points=args.n, rotation=args.rotation,
                                workers=args.workers)
    report = bench.run_experiment(spec)
    report.write(args.out, args.summary)
    line = f"{args.kind} {args.registrant}: {len(report.records)} registrations"
    if args.kind == "convergence-range":
        rng = report.convergence_range()
        line += " range=" + (f"[{rng[0]:g}, {rng[1]:g}]" if rng else "none")
    print(line)
    return EXIT_OK


def cmd_train(args) -> int:
    _check_inputs(args.input)
    _check_outputs(args.out, args.svgm)
    ps = io.read_points(args.input)
    gamma = args.gamma
    if gamma == "auto":
        s = estimate_scale(ps)
        gamma = 1.0 / (2.0 * s * s)
    model = train(ps, args.nu, gamma)
    io.save_svm_model(args.out, model)
    if args.svgm:
        io.save_svgm(args.svgm, svm_to_gmm(model))
    print(f"support_vectors={model.n_sv} of {len(ps)} rho={model.rho:.6g} "
          f"sum_alpha={float(np.sum(model.alphas)):.12g}")
    return EXIT_OK


COMMANDS = {
    "register": cmd_register,
    "merge": cmd_merge,
    "perturb": cmd_perturb,
    "bench": cmd_bench,
    "train": cmd_train,
}


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        config = _load_config(known.config) if known.config else None
        parser = build_parser(config)
    except UsageError as exc:
        print(f"svreg: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (OSError, io.FormatError) as exc:
        print(f"svreg: {exc}", file=sys.stderr)
        return EXIT_IO
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"svreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (OSError, io.FormatError) as exc:
        print(f"svreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InfeasibleNuError,) as exc:
        print(f"svreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except (SolverError, NumericalFailure, RegistrationError, DegenerateScaleError,
            FloatingPointError, ValueError) as exc:
        print(f"svreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
