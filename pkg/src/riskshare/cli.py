"""Command line runner: ``riskshare list`` and ``riskshare run CONFIG``.

Exit codes: 0 success, 1 config or usage error, 2 solver budget exceeded,
3 internal invariant violation.
"""
import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import InvariantViolation, run_experiment
from .infconv import BudgetExceeded

EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 1, 2, 3

log = logging.getLogger("riskshare")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="riskshare", description="Risk sharing experiments on finite spaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    lst = sub.add_parser("list", help="list the available experiments")
    lst.add_argument("--json", action="store_true", help="machine-readable listing")

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to a TOML experiment config")
    run.add_argument("--out-dir", help="output directory (overrides [output].dir)")
    run.add_argument("--seed", type=int, help="seed (overrides the config)")
    run.add_argument("--threads", type=int, default=1, help="worker threads for conjugate tables")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def list_experiments(as_json=False):
    if as_json:
        return json.dumps([{"name": k, "description": v} for k, v in EXPERIMENTS.items()], indent=2)
    width = max(map(len, EXPERIMENTS))
    return "\n".join(f"{k:<{width}}  {v}" for k, v in EXPERIMENTS.items())


def write_outputs(cfg, result, out_dir):
    """Write ``<name>.csv`` and ``<name>.json``; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = cfg.output.get("name", cfg.experiment)
    stamp = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    csv_path, json_path = out_dir / f"{name}.csv", out_dir / f"{name}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# riskshare {__version__} generated {stamp}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["experiment", "config_hash", "seed"] + result.columns)
        for row in result.rows:
            writer.writerow([cfg.experiment, cfg.config_hash, cfg.seed] + list(row))
    sidecar = {
        "tool": "riskshare",
        "version": __version__,
        "generated": stamp,
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "config": cfg.raw,
        "columns": result.columns,
        "rows": len(result.rows),
        "summary": result.summary,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return csv_path, json_path


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print(list_experiments(args.json))
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("riskshare: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"riskshare: config error in {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg, threads=args.threads)
    except BudgetExceeded as exc:
        print(f"riskshare: solver budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InvariantViolation as exc:
        print(f"riskshare: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    out_dir = args.out_dir or cfg.output.get("dir", ".")
    csv_path, json_path = write_outputs(cfg, result, out_dir)
    log.info("wrote %s and %s", csv_path, json_path)
    print(csv_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
