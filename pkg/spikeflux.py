"""spikeflux command line.

    spikeflux run scenarios/fig2.yaml --seed 7 --out-dir runs/fig2
    spikeflux check scenarios/theorem-suite.yaml
    spikeflux fpt-hazard --mu 3 --sigma 0.15 --v-r 0.5 --a-max 3 --output hazard.csv
    spikeflux list-scenarios

Exit codes: 0 ok, 2 configuration, 3 numerical failure, 4 tolerance breach in check mode.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from core_types import DEFAULT_V_MIN, AgeGrid, PotentialGrid, Stimulus
from errors import ConfigError, SpikefluxError
from fpt import HAZARD_FORMS
from harness import hazard_from_fpt, run_scenario
from scenario import load_scenario, pick, with_overrides

logger = logging.getLogger("spikeflux")

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("scenario", help="scenario YAML file or bundled scenario name")
    parser.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (overrides the file)")
    parser.add_argument("--out-dir", default=None, help="artifact directory (default runs/<name>)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for models and MC blocks")
    parser.add_argument("--snapshot-stride", type=int, default=None, help="density snapshot every N steps")
    parser.add_argument("--progress", action="store_true", help="show progress bars")
    parser.add_argument("--xlsx-report", action="store_true", help="also write a formatted report.xlsx")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeflux",
                                     description="Stochastic neuron models: Monte Carlo vs density equations")
    parser.add_argument("--log-level", default=None, choices=LOG_LEVELS, help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_options(sub.add_parser("run", help="run a scenario and write its artifacts"))
    _add_run_options(sub.add_parser("check", help="run a scenario; exit 4 if any check fails"))

    fpt = sub.add_parser("fpt-hazard", help="write S = ISI / P from the first-passage problem")
    fpt.add_argument("--scenario", default=None, help="take stimulus and grids from a scenario file")
    fpt.add_argument("--mu", type=float, default=None)
    fpt.add_argument("--sigma", type=float, default=None)
    fpt.add_argument("--v-r", type=float, default=None)
    fpt.add_argument("--v-min", type=float, default=DEFAULT_V_MIN)
    fpt.add_argument("--n-v", type=int, default=400)
    fpt.add_argument("--dt", type=float, default=1e-3)
    fpt.add_argument("--a-max", type=float, default=3.0)
    fpt.add_argument("--form", choices=HAZARD_FORMS, default="log")
    fpt.add_argument("--output", required=True, help="hazard CSV to write")

    listing = sub.add_parser("list-scenarios", help="list bundled scenarios")
    listing.add_argument("--dir", default=str(SCENARIO_DIR))
    return parser


def _scenario_path(name: str) -> Path:
    path = Path(name)
    if path.is_file():
        return path
    bundled = SCENARIO_DIR / f"{name}.yaml"
    if bundled.is_file():
        return bundled
    raise ConfigError(f"Scenario not found: {name}")


def cmd_run(args, check: bool) -> int:
    scenario = with_overrides(load_scenario(_scenario_path(args.scenario)), seed=args.seed,
                              threads=args.threads, snapshot_stride=args.snapshot_stride)
    out_dir = pick(args.out_dir, "OUT_DIR", str, None)
    result = run_scenario(scenario, out_dir=out_dir, check=check, progress=args.progress,
                          xlsx_report=args.xlsx_report)
    for c in result.manifest["checks"]:
        print(f"{c['name']:40s} {c['value']:.3e}  tol {c['tol']:.1e}  {'ok' if c['passed'] else 'FAIL'}")
    print(f"artifacts: {result.out_dir}")
    return 0


def cmd_fpt_hazard(args) -> int:
    if args.scenario:
        scenario = load_scenario(_scenario_path(args.scenario))
        path = hazard_from_fpt(scenario.stimulus_function(), scenario.grid, scenario.age_grid, args.output,
                               horizon=scenario.time.n_steps * scenario.time.dt, form=args.form)
    else:
        if args.mu is None or args.sigma is None or args.v_r is None:
            raise ConfigError("fpt-hazard needs --mu, --sigma and --v-r, or --scenario")
        grid = PotentialGrid(v_r=args.v_r, v_min=args.v_min, n_v=args.n_v)
        path = hazard_from_fpt(Stimulus.constant(args.mu, args.sigma), grid, AgeGrid.from_step(args.dt, args.a_max),
                               args.output, form=args.form)
    print(f"hazard: {path}")
    return 0


def cmd_list(args) -> int:
    directory = Path(args.dir)
    for path in sorted(directory.glob("*.yaml")):
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        description = " ".join(str(raw.get("description", "")).split())
        print(f"{path.stem:16s} {', '.join(raw.get('models') or ()):40s} {description}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        level = pick(args.log_level, "LOG_LEVEL", str, "INFO").upper()
        if level not in LOG_LEVELS:
            raise ConfigError(f"Unknown log level {level}")
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        if args.command in ("run", "check"):
            return cmd_run(args, check=args.command == "check")
        if args.command == "fpt-hazard":
            return cmd_fpt_hazard(args)
        return cmd_list(args)
    except SpikefluxError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
