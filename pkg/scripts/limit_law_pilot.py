"""Pilot for the asymptotic checks: Monte Carlo break errors against the
simulated argmin law at n = 100 and n = 300, and the standardized parameter
estimates of the middle phase against N(0, I).

    python scripts/limit_law_pilot.py --reps 200 --draws 10000
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from quantbreak import io
from quantbreak.asymptotics import check_normality, compare_break_law, sample_limit_law
from quantbreak.core import get_model
from quantbreak.simulation import run_table_study


@dataclass
class PilotConfig:
    reps: int = 200
    draws: int = 10_000
    J: int = 10
    seed: int = 10
    threads: int = 1
    out: Path = Path("results/limit_law_pilot.json")


def run(cfg: PilotConfig) -> dict:
    summary = {}
    for name in ("table1.cfg", "table3.cfg"):
        base = io.load_config(name)
        spec = base.scenario
        model = get_model(spec.model)
        rep = run_table_study(spec, cfg.reps, methods=("quantile",), constraints=base.constraints,
                              config=base.fit, threads=cfg.threads)["quantile"]
        entry = {}
        for r in range(1, spec.k + 1):
            law = sample_limit_law(model, spec, r, cfg.J, cfg.draws, seed=cfg.seed)
            entry[f"break_{r}"] = dataclasses.asdict(compare_break_law(rep, law, r))
        for phase in range(1, spec.k + 2):
            entry[f"phase_{phase}"] = check_normality(rep, model, spec, phase, "true").to_dict()
        summary[f"n={spec.n}"] = entry
        print(json.dumps({f"n={spec.n}": entry}, indent=1), flush=True)
    return summary


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for f in dataclasses.fields(PilotConfig):
        parser.add_argument(f"--{f.name}", type=type(f.default), default=f.default)
    cfg = PilotConfig(**vars(parser.parse_args(argv)))
    io.write_json(cfg.out, run(cfg))


if __name__ == "__main__":
    main()
