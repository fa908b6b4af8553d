"""Command line entry point: ``margda {run,validate,synth,sweep}``.

Exit status is 0 on success, 1 if any experiment cell failed and 2 if the
configuration is invalid.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import data, harness
from .errors import ConfigError, MargdaError

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_INVALID = 2

_SPEC_FLAGS = (
    ("noise", "p", float),
    ("lambda_", "lam", float),
    ("gamma", "gamma", float),
    ("omega", "omega", float),
    ("delta", "delta", float),
    ("alpha", "alpha", float),
    ("max_iters", "max_iters", int),
)


def _add_experiment_flags(p):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--data", nargs="+", metavar="PATH", help="dataset files (override [data] paths)")
    p.add_argument("--format", choices=harness.FORMATS, help="dataset file format")
    p.add_argument("--domains", help="comma-separated domain names to use")
    p.add_argument("--scenario", type=str.upper, choices=data.SCENARIOS)
    p.add_argument("--model", help="comma-separated model names")
    p.add_argument("--classifier", help="comma-separated classifiers (ridge, nn, dscm)")
    p.add_argument("--noise", type=float, help="dropout probability p")
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--labeled-per-class", type=int)
    p.add_argument("--seeds", help="seed list such as 0,1,2 or 0-9")
    p.add_argument("--coupling-rule", type=str.lower, choices=("exact", "paper"))
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--sigma", type=float, help="DSCM kernel width")
    p.add_argument("--output", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--no-timing", action="store_true", help="write wall_time_ms as 0 for reproducible CSVs")


def build_parser():
    parser = argparse.ArgumentParser(prog="margda", description="Marginalized denoising domain adaptation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("run", "run an experiment grid"), ("validate", "check a configuration without fitting")):
        _add_experiment_flags(sub.add_parser(name, help=text))

    sw = sub.add_parser("sweep", help="grid over lambda, gamma and p")
    _add_experiment_flags(sw)
    sw.add_argument("--lambda-grid", help="comma-separated lambda values")
    sw.add_argument("--gamma-grid", help="comma-separated gamma values")
    sw.add_argument("--noise-grid", help="comma-separated p values")

    sy = sub.add_parser("synth", help="write synthetic shifted domains in dense format")
    sy.add_argument("--output", required=True, help="file to write")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--n-domains", type=int, default=2)
    sy.add_argument("--dim", type=int, default=20)
    sy.add_argument("--classes", type=int, default=4)
    sy.add_argument("--per-class", type=int, default=50)
    sy.add_argument("--shift", type=float, default=None, help="shift norm (default: 2x class radius)")
    sy.add_argument("--angle", type=float, default=0.0, help="rotation angle in radians")
    sy.add_argument("--class-std", type=float, default=1.0)
    sy.add_argument("--names", help="comma-separated domain names")
    return parser


def config_from_args(args):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    if args.data:
        cfg.paths = list(args.data)
    if args.format:
        cfg.data_format = args.format
    if args.domains:
        cfg.domains = harness._split_list(args.domains)
    if args.scenario:
        cfg.scenario = args.scenario
    if args.model:
        cfg.models = [m.upper() for m in harness._split_list(args.model)]
    if args.classifier:
        cfg.classifiers = [c.lower() for c in harness._split_list(args.classifier)]
    updates = {}
    for flag, name, _ in _SPEC_FLAGS:
        value = getattr(args, flag)
        if value is not None:
            updates[name] = value
    if updates:
        cfg.spec = replace(cfg.spec, **updates)
    if args.labeled_per_class is not None:
        cfg.labeled_per_class = args.labeled_per_class
    if args.seeds:
        cfg.seeds = harness.parse_seeds(args.seeds)
    if args.coupling_rule:
        cfg.coupling_rule = args.coupling_rule
    if args.no_standardize:
        cfg.standardize = False
    if args.sigma is not None:
        cfg.dscm_sigma = args.sigma
    if args.output:
        cfg.output = args.output
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.no_timing:
        cfg.record_timing = False
    return cfg


def _metadata(cfg):
    return {"config": cfg.resolved(), "standardized": cfg.standardize}


def _prepare(args):
    """Resolve and validate; returns ``(cfg, None)`` or ``(None, exit_code)``."""
    try:
        cfg = config_from_args(args)
        # parse ModelSpec values early so bad hyperparameters are a config error
        cfg.spec = replace(cfg.spec)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, EXIT_INVALID
    report = harness.validate(cfg)
    if not report.ok:
        print(report.format(), file=sys.stderr)
        return None, EXIT_INVALID
    return cfg, None


def cmd_validate(args):
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = harness.validate(cfg)
    print(report.format())
    return EXIT_OK if report.ok else EXIT_INVALID


def _print_aggregate(agg):
    for cell in agg.values():
        print(f"{cell['model']:>5} {cell['classifier']:<6} mean={cell['mean']:.4f} std={cell['std']:.4f} n={cell['n']}")


def cmd_run(args):
    cfg, code = _prepare(args)
    if cfg is None:
        return code
    result = harness.run(cfg)
    csv_path, json_path = harness.emit(result.records, result.aggregate, cfg.output, result.failures, _metadata(cfg))
    _print_aggregate(result.aggregate)
    for f in result.failures:
        print(f"FAILED {f.source}->{f.target} {f.model} seed {f.seed}: {f.error}", file=sys.stderr)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK if result.ok else EXIT_CELL_FAILED


def cmd_sweep(args):
    cfg, code = _prepare(args)
    if cfg is None:
        return code
    grid = dict(cfg.sweep)
    for flag, name in (("lambda_grid", "lam"), ("gamma_grid", "gamma"), ("noise_grid", "p")):
        value = getattr(args, flag)
        if value:
            grid[name] = [float(v) for v in harness._split_list(value)]
    if not grid:
        print("error: sweep needs at least one grid ([sweep] section or --*-grid)", file=sys.stderr)
        return EXIT_INVALID
    try:
        results = harness.sweep(cfg, grid)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = harness.emit_sweep(results, cfg.output)
    print(f"wrote {out}")
    return EXIT_OK if all(r.ok for _, r in results) else EXIT_CELL_FAILED


def cmd_synth(args):
    names = harness._split_list(args.names) if args.names else None
    shift = 2.0 * data.class_radius(args.dim, args.class_std) if args.shift is None else args.shift
    try:
        domains = data.synth_domains(
            args.seed, args.n_domains, args.dim, args.classes, args.per_class, shift, args.angle,
            class_std=args.class_std, names=names,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    parent = os.path.dirname(os.path.abspath(args.output))
    os.makedirs(parent, exist_ok=True)
    data.write_dense(data.concat(domains), args.output)
    total = int(np.sum([len(d) for d in domains]))
    print(f"wrote {total} rows in {len(domains)} domains to {args.output}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep, "synth": cmd_synth}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CELL_FAILED
    except MargdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
