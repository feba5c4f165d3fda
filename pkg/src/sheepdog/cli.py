"""Command line front end: ``sheepdog {run, sweep, presets}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ParseError, ValidationError
from .experiments import PRESET_NAMES, _atomic_write, load_config, preset, run_scenario, sweep_table

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _overrides(cfg, args, output_dir=None):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.samples is not None:
        changes["n_samples"] = args.samples
    if output_dir is not None:
        changes["output_dir"] = str(output_dir)
    return cfg.replace(**changes) if changes else cfg


def _scenarios(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
        return [(cfg.label or Path(args.config).stem, cfg)]
    if args.preset:
        return preset(args.preset)
    raise ConfigError("one of --config or --preset is required")


def cmd_run(args):
    scenarios = _scenarios(args)
    if len(scenarios) != 1:
        raise ConfigError(f"preset {args.preset!r} has {len(scenarios)} scenarios; use 'sweep'")
    label, cfg = scenarios[0]
    cfg = _overrides(cfg, args, args.output_dir)
    record = run_scenario(cfg)
    print(json.dumps({"label": label, "status": record.status, "output_dir": cfg.output_dir,
                      "error": record.error}, sort_keys=True))
    return EXIT_OK if record.status == "ok" else EXIT_NUMERICAL


def cmd_sweep(args):
    scenarios = _scenarios(args)
    root = Path(args.output_dir or "out") / (args.preset or scenarios[0][0])
    records = []
    for label, cfg in scenarios:
        cfg = _overrides(cfg, args, root / label)
        record = run_scenario(cfg)
        records.append(record)
        print(json.dumps({"label": label, "status": record.status, "sm_iterations": record.sm_iterations,
                          "l2_error_deterministic": record.l2_error_deterministic,
                          "l2_error_space_mapping": record.l2_error_space_mapping,
                          "steering_time": record.steering_time}, sort_keys=True), flush=True)
    _atomic_write(root / "table.csv", sweep_table(records))
    return EXIT_OK if all(r.status == "ok" for r in records) else EXIT_NUMERICAL


def cmd_presets(args):
    if args.preset:
        for _, cfg in preset(args.preset):
            sys.stdout.write(cfg.to_json())
    else:
        for name in PRESET_NAMES:
            print(name)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sheepdog", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, hlp in (("run", cmd_run, "run one scenario"),
                            ("sweep", cmd_sweep, "run every scenario of a preset"),
                            ("presets", cmd_presets, "list presets or print one as JSON")):
        p = sub.add_parser(name, help=hlp)
        p.set_defaults(func=func)
        p.add_argument("--preset", choices=PRESET_NAMES)
        if name != "presets":
            p.add_argument("--config", help="JSON scenario file")
            p.add_argument("--seed", type=int)
            p.add_argument("--samples", type=int, help="Monte Carlo samples per space-map evaluation")
            p.add_argument("--output-dir")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
