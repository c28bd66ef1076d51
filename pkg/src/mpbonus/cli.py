"""Command-line entry point: ``mpbonus <subcommand> ...``.

Exit codes: 0 on success, 1 when a run fails at runtime, 2 for configuration
errors (bad keys or values, unknown environments, incompatible run dirs).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import experiment
from .errors import ConfigError, UnsupportedEnvError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load(args):
    overrides = _overrides(args.set)
    if getattr(args, "seeds", None):
        overrides["run.seeds"] = args.seeds
    if getattr(args, "output", None):
        overrides["run.output_dir"] = args.output
    return config_mod.load(args.config, overrides, getattr(args, "paper_scale", False))


def cmd_run(args):
    cfg = _load(args)
    results = experiment.run_experiment(cfg, jobs=args.jobs, log_bonuses=args.log_bonuses)
    for r in results:
        print(f"seed {r.seed}: {r.run_dir}")
    print(f"aggregate: {cfg.output_dir / 'aggregate.csv'}")


def cmd_compare(args):
    report = experiment.compare(args.dirs, args.output)
    sys.stdout.write(experiment.format_csv(
        ("label", "directory", "n_runs", "auc100", "final_score"), report.rows))
    print(f"winner: {report.winner}")


def cmd_auc(args):
    paths = []
    for p in map(Path, args.curves):
        paths.extend(sorted(p.glob("**/curve.csv")) if p.is_dir() else [p])
    if not paths:
        raise ConfigError("no curve.csv files given")
    sys.stdout.write(experiment.format_csv(experiment.AUC_COLUMNS, experiment.auc_table(paths)))


def cmd_tap_sweep(args):
    cfg = _load(args)
    taps = [int(t) for t in args.taps.replace(",", " ").split()]
    rows = experiment.tap_sweep(cfg, taps, jobs=args.jobs)
    sys.stdout.write(experiment.format_csv(("tap_index", "encode_dim", "auc100", "final_score"),
                                           rows))


def cmd_ablate_pixels(args):
    cfg = _load(args)
    rows = experiment.ablation_raw_pixels(cfg, jobs=args.jobs)
    sys.stdout.write(experiment.format_csv(("seed", "cv_raw", "cv_encoded"), rows))


def cmd_dump_frames(args):
    cfg = _load(args)
    paths = experiment.dump_frames(cfg.make_env(), args.count, args.output or cfg.output_dir,
                                   cfg.seeds[0])
    print(f"wrote {len(paths)} frames to {paths[0].parent if paths else args.output}")


def build_parser():
    parser = argparse.ArgumentParser(prog="mpbonus", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, seeds=True):
        p.add_argument("config", nargs="?", help="config file or a run's manifest.json")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--paper-scale", action="store_true",
                       help="50,000-step epochs, 10,000 test steps, 100 epochs")
        p.add_argument("-o", "--output", help="output directory (run.output_dir)")
        if seeds:
            p.add_argument("--seeds", help="comma-separated seeds (run.seeds)")
        return p

    def with_jobs(p):
        p.add_argument("--jobs", type=int, default=None,
                       help="maximum concurrent runs (default: all CPUs)")
        return p

    p = with_jobs(with_config(sub.add_parser("run", help="run every seed of a config")))
    p.add_argument("--log-bonuses", action="store_true", help="write bonuses.csv per run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="overlay experiments and pick the AUC-100 winner")
    p.add_argument("dirs", nargs="+", help="experiment or run directories")
    p.add_argument("-o", "--output", help="write compare.csv, compare.svg, winner.txt here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("auc", help="AUC-100 table for curve.csv files or directories")
    p.add_argument("curves", nargs="+")
    p.set_defaults(func=cmd_auc)

    p = with_jobs(with_config(sub.add_parser("tap-sweep", help="compare encoder tap layers")))
    p.add_argument("--taps", default="4,6", help="comma-separated 1-based tap indices")
    p.set_defaults(func=cmd_tap_sweep)

    p = with_jobs(with_config(sub.add_parser(
        "ablate-pixels", help="bonus dispersion with raw-pixel versus learned codes")))
    p.set_defaults(func=cmd_ablate_pixels)

    p = with_config(sub.add_parser("dump-frames", help="write random-play frames as PGM"))
    p.add_argument("-n", "--count", type=int, default=20)
    p.set_defaults(func=cmd_dump_frames)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UnsupportedEnvError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except experiment.RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
