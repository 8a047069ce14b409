"""Command-line front door: ``fedpeft {partition,train,bench,chart}``.

Exit codes: 0 on success, 1 when a stage fails on the data or the run
itself, 2 for usage and configuration errors. Every written path is printed
on its own line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from . import __version__
from . import experiment as xp
from .chart import chart_from_csv
from .config import OUT_ENV, SCENARIOS, ConfigError, ExperimentConfig, parse_assignment
from .evaluation import compare_scenarios, table_csv, table_json
from .partition import plan_report
from .peft import save_phi

log = logging.getLogger("fedpeft")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
ROUND_FIELDS = ("round", "bytes_up", "bytes_down", "mean_loss", "val_accuracy")


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


class _Stage:
    """Context manager tagging domain errors with the failing stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and isinstance(exc, (ValueError, OSError, ArithmeticError, IndexError)) \
                and not isinstance(exc, ConfigError):
            raise StageError(self.name, exc) from exc
        return False


# ------------------------------------------------------------------ output helpers

def _write(path, text, written):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    written.append(path)
    print(path)


def _json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _rows_csv(rows, fields):
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return out.getvalue()


def _config_from(args):
    overrides = [parse_assignment(s) for s in args.set or ()]
    if args.seed is not None:
        overrides.append({"seed": args.seed})
    if args.peft is not None:
        overrides.append({"adapter": {"method": args.peft}})
    if args.out is not None:
        overrides.append({"out": args.out})
    if getattr(args, "scenario", None) is not None:
        chosen = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
        overrides.append({"run": {"scenarios": chosen}})
    return ExperimentConfig.load(args.config, overrides)


def _prepare(cfg):
    with _Stage("data"):
        prep = xp.prepare_data(cfg)
    with _Stage("partition"):
        plan = xp.make_plan(cfg, prep)
    return prep, plan


def _write_plan(cfg, plan, written):
    out = cfg.out_dir
    _write(os.path.join(out, "plan.json"), plan.to_json(), written)
    _write(os.path.join(out, "histogram.csv"), plan_report(plan), written)


def _write_reports(cfg, reports, method, written):
    out = cfg.out_dir
    for name, rep in reports.items():
        stem = f"{method}_{name}"
        _write(os.path.join(out, f"report_{stem}.json"), _json(xp.report_dict(rep, cfg)), written)
        _write(os.path.join(out, f"rounds_{stem}.csv"), _rows_csv(rep.per_round, ROUND_FIELDS), written)
        if rep.final_phi is not None:
            path = os.path.join(out, f"phi_{stem}.fptn")
            save_phi(path, rep.final_phi)
            written.append(path)
            print(path)


# ------------------------------------------------------------------ subcommands

def cmd_partition(args):
    cfg = _config_from(args)
    _, plan = _prepare(cfg)
    written = []
    _write_plan(cfg, plan, written)
    return written


def cmd_train(args):
    cfg = _config_from(args)
    prep, plan = _prepare(cfg)
    method = cfg["adapter"]["method"]
    with _Stage("model"):
        model = xp.build_model(cfg)
    with _Stage("train"):
        reports = xp.run_scenarios(cfg, prep, plan, model, cfg["run"]["scenarios"])
    written = []
    _write_plan(cfg, plan, written)
    _write_reports(cfg, reports, method, written)
    return written


def cmd_bench(args):
    if args.scenario not in (None, "all"):
        raise ConfigError("bench always runs all three scenarios; drop --scenario")
    args.scenario = "all"
    cfg = _config_from(args)
    prep, plan = _prepare(cfg)
    method = cfg["adapter"]["method"]
    with _Stage("model"):
        model = xp.build_model(cfg)
    with _Stage("train"):
        reports = xp.run_scenarios(cfg, prep, plan, model, SCENARIOS)
    with _Stage("compare"):
        row = compare_scenarios(reports, model="desk", peft=method)
    with _Stage("efficiency"):
        eff = xp.efficiency_probe(cfg, prep)
    written = []
    out = cfg.out_dir
    _write_plan(cfg, plan, written)
    _write_reports(cfg, reports, method, written)
    _write(os.path.join(out, "comparison.csv"), table_csv([row]), written)
    _write(os.path.join(out, "comparison.json"), table_json([row]), written)
    _write(os.path.join(out, "efficiency.csv"), _rows_csv(eff, xp.EFFICIENCY_FIELDS), written)
    return written


def cmd_chart(args):
    try:
        with open(args.csv, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise StageError("chart", exc) from None
    with _Stage("chart"):
        svg = chart_from_csv(text)
    out = args.out or os.environ.get(OUT_ENV) or os.path.dirname(os.path.abspath(args.csv))
    written = []
    _write(os.path.join(out, args.name), svg, written)
    return written


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    common.add_argument("--peft", choices=xp.PEFT_METHODS, help="adapter method")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./runs)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. federation.lr=0.001 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="fedpeft", description="Federated PEFT benchmark engine.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{partition,train,bench,chart}")
    sub.required = True

    sp = sub.add_parser("partition", parents=[common], help="write the node partition plan")
    sp.set_defaults(func=cmd_partition, scenario=None)

    for name, fn, hlp in (("train", cmd_train, "train the selected scenario(s)"),
                          ("bench", cmd_bench, "all scenarios + comparison and efficiency tables")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--scenario", choices=(*SCENARIOS, "all"),
                        help="scenario to run (default: config run.scenarios)")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("chart", help="grouped-bar SVG from a comparison CSV")
    sp.add_argument("csv", help="comparison CSV written by bench")
    sp.add_argument("--out", metavar="DIR", help="output directory (default: next to the CSV)")
    sp.add_argument("--name", default="chart.svg", help="output file name")
    sp.add_argument("-v", "--verbose", action="count", default=0)
    sp.set_defaults(func=cmd_chart)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"fedpeft: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"fedpeft: error in stage {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
