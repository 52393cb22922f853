"""Command-line front end: synthesize data, plan a schedule, export a model.

Exit codes: 0 success/optimal, 2 usage, 3 data validation, 4 solver limit or
oversized instance, 5 internal consistency failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import model_io, report as report_mod
from .droop import build_requirements, write_requirements_csv
from .errors import (BessbidError, ConsistencyError, EnumerationLimitError,
                     ModelBuildError, ParseError, ValidationError)
from .formulation import ModelOptions, build_model
from .markets import MARKETS, BessConfig, Market, degradation_costs, parse_market_subset
from .scenarios import (SynthesisParams, load_scenarios, save_scenarios,
                        synthesize_scenarios)
from .solver import BINARY_GUARDRAIL, SolverOptions, solution_to_json, solve_bb, validate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_SOLVER_LIMIT = 4
EXIT_INTERNAL = 5

_BESS_FIELDS = {f.name for f in dataclasses.fields(BessConfig)}
_RUN_KEYS = {"frequency_csv", "prices_csv", "probabilities_csv", "seed", "days",
             "markets", "out_dir", "solver", "synth"}


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bessbid",
        description="Plan hourly battery bids across reserve and spot markets.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write synthetic scenario CSV files")
    synth.add_argument("--seed", type=int, default=1)
    synth.add_argument("--days", type=_positive_int, default=7)
    synth.add_argument("--step", type=int, default=60, help="minutes per step")
    synth.add_argument("--out", type=Path, default=Path("scenarios"))

    for name, needs_format in (("plan", False), ("export", True)):
        cmd = sub.add_parser(name, help="run the optimization pipeline" if name == "plan"
                             else "build the model and write an MPS/LP file")
        cmd.add_argument("--config", type=Path, help="JSON run configuration")
        cmd.add_argument("--freq", type=Path, help="frequency CSV")
        cmd.add_argument("--prices", type=Path, help="prices CSV")
        cmd.add_argument("--probs", type=Path, help="optional probabilities CSV")
        cmd.add_argument("--seed", type=int, help="synthesize scenarios instead of loading")
        cmd.add_argument("--days", type=_positive_int, help="number of synthetic days")
        cmd.add_argument("--markets", type=str,
                         help="comma-separated subset, e.g. N,D,SDCH,SCH")
        cmd.add_argument("--cdeg", type=float, help="degradation cost EUR/MWh")
        cmd.add_argument("--step", type=int, help="minutes per step")
        cmd.add_argument("--out", type=Path, default=Path("out"))
        if name == "plan":
            cmd.add_argument("--export-only", action="store_true",
                             help="write the model files and skip solving")
            cmd.add_argument("--format", choices=("mps", "lp"), default="mps")
            cmd.add_argument("--node-limit", type=int)
            cmd.add_argument("--time-limit", type=float)
            cmd.add_argument("--gap", type=float)
        else:
            cmd.add_argument("--format", choices=("mps", "lp"), default="mps")
    return parser


def _load_run_config(path: Path | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - _BESS_FIELDS - _RUN_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys {sorted(unknown)}")
    return raw


def _assemble(args, cfg: dict):
    """Build (scenarios, config, enabled_markets, solver_options) from config
    file plus flag overrides (flags win)."""
    bess_kwargs = {k: cfg[k] for k in cfg if k in _BESS_FIELDS}
    if args.cdeg is not None:
        bess_kwargs["c_deg_eur_per_mwh"] = args.cdeg
    if args.step is not None:
        bess_kwargs["step_minutes"] = args.step

    seed = args.seed if args.seed is not None else cfg.get("seed")
    days = args.days if args.days is not None else cfg.get("days")
    freq = args.freq or cfg.get("frequency_csv")
    prices = args.prices or cfg.get("prices_csv")
    probs = args.probs or cfg.get("probabilities_csv")

    if freq and prices:
        scenarios = load_scenarios(freq, prices, probs)
        bess_kwargs.setdefault("step_minutes", scenarios.step_minutes)
        if args.step is None and "step_minutes" not in cfg:
            bess_kwargs["step_minutes"] = scenarios.step_minutes
    elif seed is not None:
        synth_kwargs = dict(cfg.get("synth", {}))
        if "step_minutes" in bess_kwargs:
            synth_kwargs.setdefault("step_minutes", bess_kwargs["step_minutes"])
        params = SynthesisParams(**synth_kwargs)
        scenarios = synthesize_scenarios(seed, days or 7, params)
        bess_kwargs["step_minutes"] = params.step_minutes
    else:
        raise ValidationError("provide --freq/--prices files or --seed for synthesis")

    config = BessConfig(**bess_kwargs)
    markets_spec = args.markets or cfg.get("markets")
    if isinstance(markets_spec, list):
        markets_spec = ",".join(markets_spec)
    enabled = parse_market_subset(markets_spec) if markets_spec else tuple(MARKETS)

    solver_kwargs = dict(cfg.get("solver", {}))
    if getattr(args, "node_limit", None) is not None:
        solver_kwargs["node_limit"] = args.node_limit
    if getattr(args, "time_limit", None) is not None:
        solver_kwargs["time_limit_s"] = args.time_limit
    if getattr(args, "gap", None) is not None:
        solver_kwargs["gap_abs"] = args.gap
    return scenarios, config, enabled, SolverOptions(**solver_kwargs)


def cmd_synth(args) -> int:
    params = SynthesisParams(step_minutes=args.step)
    sset = synthesize_scenarios(args.seed, args.days, params)
    args.out.mkdir(parents=True, exist_ok=True)
    save_scenarios(sset, args.out / "frequency.csv", args.out / "prices.csv",
                   args.out / "probabilities.csv")
    logger.info("wrote %d day-scenarios to %s", args.days, args.out)
    return EXIT_OK


def _build_pipeline(args):
    cfg = _load_run_config(args.config)
    scenarios, config, enabled, solver_opts = _assemble(args, cfg)
    req = build_requirements(scenarios, config)
    deg = degradation_costs(req, config)
    model = build_model(scenarios, req, deg, config, enabled_markets=enabled)
    return scenarios, config, req, deg, model, solver_opts


def cmd_plan(args) -> int:
    scenarios, config, req, deg, model, solver_opts = _build_pipeline(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    model_io.write_model_summary(model, out / "model_summary.json")

    if args.export_only:
        target = out / f"model.{args.format}"
        model_io.export(model, args.format, target)
        logger.info("model written to %s", target)
        return EXIT_OK

    if model.n_binaries > BINARY_GUARDRAIL:
        logger.error(
            "instance has %d binaries, above the built-in solver guardrail (%d); "
            "re-run with --export-only and hand the file to an industrial solver",
            model.n_binaries, BINARY_GUARDRAIL)
        return EXIT_SOLVER_LIMIT

    solution = solve_bb(model, solver_opts)
    if solution.status == "infeasible":
        logger.error("model reported infeasible; the no-bid plan is always feasible, "
                     "so this is a formulation bug — dumping diagnostics")
        (out / "diagnostics.json").write_text(json.dumps(model.census(), indent=2))
        return EXIT_INTERNAL
    if solution.status != "optimal":
        logger.error("solver stopped at %s with gap %.3g after %d nodes",
                     solution.status, solution.gap, solution.node_count)
        return EXIT_SOLVER_LIMIT

    violations = validate(solution, model)
    if not violations.ok:
        logger.error("solution failed validation:\n%s", violations)
        return EXIT_INTERNAL

    rep = report_mod.settle(solution, scenarios, req, deg, config)
    solution_to_json(solution, model, out / "solution.json")
    report_mod.emit(rep, out)
    write_requirements_csv(req, scenarios, out / "requirements.csv")
    logger.info("optimal expected revenue: %.2f EUR (%d nodes, %.2f s)",
                solution.objective, solution.node_count, solution.wall_time_s)
    return EXIT_OK


def cmd_export(args) -> int:
    _, _, _, _, model, _ = _build_pipeline(args)
    args.out.mkdir(parents=True, exist_ok=True)
    target = args.out / f"model.{args.format}"
    model_io.export(model, args.format, target)
    model_io.write_model_summary(model, args.out / "model_summary.json")
    print(json.dumps(model.census(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "plan":
            return cmd_plan(args)
        if args.command == "export":
            return cmd_export(args)
        parser.error(f"unknown command {args.command!r}")
    except (ParseError, ValidationError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except EnumerationLimitError as exc:
        logger.error("%s", exc)
        return EXIT_SOLVER_LIMIT
    except (ConsistencyError, ModelBuildError) as exc:
        logger.error("%s", exc)
        return EXIT_INTERNAL
    except BessbidError as exc:
        logger.error("%s", exc)
        return EXIT_INTERNAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
