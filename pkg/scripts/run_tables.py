"""Reproduce the four simulation tables: break medians, parameter means and
sds (tables 1-3) and selection frequencies (table 4), for each error law.

    python scripts/run_tables.py --out results/ --reps 100
    python scripts/run_tables.py --tables 4 --laws cauchy --reps 20
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quantbreak import io
from quantbreak.simulation import run_selection_study, run_table_study

log = logging.getLogger("run_tables")

CLOSE_PHASES = ((0.5, 1.0), (1.0, -0.5))


@dataclass
class TablesConfig:
    out: Path = Path("results")
    reps: int = 100
    tables: tuple[int, ...] = (1, 2, 3, 4)
    laws: tuple[str, ...] = ("normal", "laplace", "cauchy")
    threads: int = 1
    seed_offset: int = 0
    methods: tuple[str, ...] = field(default=("quantile", "ls"))


def _fmt(v) -> str:
    return str(np.round(np.asarray(v, float), 2).tolist())


def table_rows(number: int, cfg: TablesConfig):
    base = io.load_config(f"table{number}.cfg")
    for law in cfg.laws:
        spec = dataclasses.replace(base.scenario, error_law=law, seed=base.scenario.seed + cfg.seed_offset)
        start = time.perf_counter()
        reports = run_table_study(spec, cfg.reps, methods=cfg.methods, constraints=base.constraints,
                                  config=base.fit, threads=cfg.threads)
        log.info("table %d %s: %.0fs", number, law, time.perf_counter() - start)
        for method, rep in reports.items():
            stem = cfg.out / f"table{number}_{law}_{method}"
            io.write_json(stem.with_suffix(".json"), rep.to_dict())
            io.atomic_write(stem.with_suffix(".csv"), rep.to_csv())
            yield (f"table {number} | {law:7s} | {method:8s} | breaks {rep.break_medians} | "
                   f"means {_fmt(rep.phi_means)} | sds {_fmt(rep.phi_sds)} | failures {len(rep.failures)}")


def selection_rows(cfg: TablesConfig):
    base = io.load_config("table4.cfg")
    designs = {"far": base.scenario.true_phis, "close": CLOSE_PHASES}
    for design, phis in designs.items():
        for law in cfg.laws:
            spec = dataclasses.replace(base.scenario, error_law=law, true_phis=phis,
                                       seed=base.scenario.seed + cfg.seed_offset)
            reports = run_selection_study(spec, cfg.reps, sel=base.selection, methods=cfg.methods,
                                          constraints=base.constraints, config=base.fit,
                                          threads=cfg.threads)
            for method, rep in reports.items():
                stem = cfg.out / f"table4_{design}_{law}_{method}"
                io.write_json(stem.with_suffix(".json"), rep.to_dict())
                io.atomic_write(stem.with_suffix(".csv"), rep.to_csv())
                freqs = " ".join(f"K={k}:{v}" for k, v in rep.selection_freqs.items())
                yield f"table 4 | {design:5s} | {law:7s} | {method:8s} | {freqs}"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=TablesConfig.out)
    parser.add_argument("--reps", type=int, default=TablesConfig.reps)
    parser.add_argument("--tables", type=int, nargs="+", default=list(TablesConfig.tables))
    parser.add_argument("--laws", nargs="+", default=list(TablesConfig.laws))
    parser.add_argument("--methods", nargs="+", default=["quantile", "ls"])
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed-offset", type=int, default=0)
    args = parser.parse_args(argv)
    cfg = TablesConfig(out=args.out, reps=args.reps, tables=tuple(args.tables), laws=tuple(args.laws),
                       threads=args.threads, seed_offset=args.seed_offset, methods=tuple(args.methods))
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    lines = []
    for number in cfg.tables:
        rows = selection_rows(cfg) if number == 4 else table_rows(number, cfg)
        for row in rows:
            print(row, flush=True)
            lines.append(row)
    io.atomic_write(cfg.out / "summary.txt", "\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
