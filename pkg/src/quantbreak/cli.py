"""Command-line entry point: ``quantbreak {fit,select,simulate,limit-law,check-normality}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io
from .asymptotics import check_normality, sample_limit_law
from .changepoint import InfeasibleSegmentation, fit_k_changepoints
from .core import get_model
from .estimator import EstimationError
from .selection import select_k_ls, select_k_quantile
from .simulation import McReport, run_selection_study, run_table_study

EXIT_OK, EXIT_INVALID, EXIT_OPTIMIZER = 0, 2, 3

log = logging.getLogger("quantbreak")


def _overrides(args) -> dict:
    values = dict(io.parse_override(s) for s in args.set or [])
    for flag, key in getattr(args, "_flag_keys", {}).items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return values


def _common(p: argparse.ArgumentParser, flags: dict[str, str]):
    p.add_argument("--config", help="run configuration file (dotted section.key = value)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration value; repeatable")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(_flag_keys=flags)


def _dataset_args(p):
    p.add_argument("data", help="CSV with header x1..xd,y")
    p.add_argument("--model", default="mono_molecular")
    p.add_argument("--method", choices=("quantile", "ls"), default="quantile")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-step", type=int)
    p.add_argument("--out", required=True, help="JSON result path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantbreak", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    dataset_flags = {"seed": "fit.seed", "grid_step": "constraints.grid_step"}

    p = sub.add_parser("fit", help="estimate k change-points and phase parameters")
    _dataset_args(p)
    p.add_argument("--k", type=int, required=True)
    _common(p, dataset_flags)

    p = sub.add_parser("select", help="choose the number of change-points")
    _dataset_args(p)
    p.add_argument("--k-max", type=int)
    _common(p, dict(dataset_flags, k_max="selection.k_max"))

    p = sub.add_parser("simulate", help="Monte Carlo study from a scenario file")
    p.add_argument("scenario", help="scenario file, e.g. table1.cfg")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, help="base seed (required)")
    p.add_argument("--out-dir", required=True)
    _common(p, {"seed": "scenario.seed"})

    p = sub.add_parser("limit-law", help="simulate the limiting law of a break estimator")
    p.add_argument("scenario")
    p.add_argument("--segment", type=int, default=1, help="break index r")
    p.add_argument("--J", type=int, default=15)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--seed", type=int, help="seed (required)")
    p.add_argument("--report", help="McReport JSON to compare against")
    p.add_argument("--out", required=True, help="pmf CSV path")
    _common(p, {})

    p = sub.add_parser("check-normality", help="standardise phase estimates from a report")
    p.add_argument("report", help="McReport JSON written by simulate")
    p.add_argument("--segment", type=int, default=1, help="phase index r")
    p.add_argument("--f0", default="true", help="'true', 'estimate' or a number")
    p.add_argument("--out-dir", required=True)
    _common(p, {})
    return parser


def _cmd_fit(args) -> int:
    cfg = io.load_config(args.config, _overrides(args))
    data = io.read_dataset(args.data)
    model = io.model_for(args.model, data.dim_x)
    fit = fit_k_changepoints(model, data, args.k, args.tau, cfg.constraints, cfg.fit,
                             method=args.method, threads=args.threads)
    out = dict(fit.to_dict(), model=model.name, method=args.method, tau=args.tau, n=data.n)
    io.write_json(args.out, out)
    return EXIT_OK


def _cmd_select(args) -> int:
    cfg = io.load_config(args.config, _overrides(args))
    data = io.read_dataset(args.data)
    model = io.model_for(args.model, data.dim_x)
    if args.method == "quantile":
        res = select_k_quantile(model, data, args.tau, cfg.selection, cfg.constraints, cfg.fit,
                                threads=args.threads)
    else:
        res = select_k_ls(model, data, cfg.selection, cfg.constraints, cfg.fit, threads=args.threads)
    out = dict(res.to_dict(), model=model.name, tau=args.tau, n=data.n)
    io.write_json(args.out, out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.seed is None:
        raise io.ConfigError("simulate needs an explicit --seed")
    if args.reps < 1:
        raise io.ConfigError("--reps must be at least 1")
    cfg = io.load_config(args.scenario, _overrides(args))
    if cfg.scenario is None:
        raise io.ConfigError("scenario section missing from configuration")
    common = dict(methods=cfg.study.methods, constraints=cfg.constraints, config=cfg.fit,
                  threads=args.threads)
    if cfg.study.kind == "table":
        reports = run_table_study(cfg.scenario, args.reps, k=cfg.study.k, **common)
    else:
        reports = run_selection_study(cfg.scenario, args.reps, sel=cfg.selection, **common)
    out = Path(args.out_dir)
    for method, rep in reports.items():
        io.write_json(out / f"report_{method}.json", dict(rep.to_dict(), config=io.config_to_dict(cfg)))
        io.atomic_write(out / f"replications_{method}.csv", rep.to_csv())
    return EXIT_OK


def _cmd_limit_law(args) -> int:
    if args.seed is None:
        raise io.ConfigError("limit-law needs an explicit --seed")
    cfg = io.load_config(args.scenario, _overrides(args))
    if cfg.scenario is None:
        raise io.ConfigError("scenario section missing from configuration")
    spec = cfg.scenario
    law = sample_limit_law(get_model(spec.model), spec, args.segment, args.J, args.draws, seed=args.seed)
    io.atomic_write(args.out, law.to_csv())
    if args.report:
        from .asymptotics import compare_break_law

        mc = McReport.from_dict(json.loads(Path(args.report).read_text()))
        cmp = compare_break_law(mc, law, args.segment)
        print(json.dumps(dataclasses.asdict(cmp), sort_keys=True))
    return EXIT_OK


def _cmd_check_normality(args) -> int:
    mc = McReport.from_dict(json.loads(Path(args.report).read_text()))
    f0 = args.f0 if args.f0 in ("true", "estimate") else float(args.f0)
    res = check_normality(mc, None, mc.scenario, args.segment, f0)
    out = Path(args.out_dir)
    io.write_json(out / "normality.json", res.to_dict())
    io.atomic_write(out / "standardized.csv", res.to_csv())
    return EXIT_OK


COMMANDS = {
    "fit": _cmd_fit,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "limit-law": _cmd_limit_law,
    "check-normality": _cmd_check_normality,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except (ValueError, KeyError, TypeError, OSError, InfeasibleSegmentation) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
