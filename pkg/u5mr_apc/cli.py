"""Command-line entry point: ``u5mr-apc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .aggregate import SUMMARY_COLUMNS, age_specific_hazards, read_proportions, summary_table, u5mr_draws
from .config import ModelConfig, configure_logging, load_model_config, read_json
from .data import aggregate_cells, expand_survey, load_survey_csv, write_rejections
from .direct import NATIONAL, direct_table, estimates_from_table, fay_herriot_smooth
from .errors import ConfigError, U5mrError
from .inference import fit, refit_at, sample_latent
from .model import HyperParams
from .report import write_report
from .spatial import read_adjacency, read_polygons
from .synth import SurveyDesign, SynthConfig, draw_survey, generate_population, load_synth_config, write_simulation
from .temporal import VARIANTS, period_grid
from .validate import loro_cv, score_cv, scores_table, write_scores

logger = logging.getLogger(__name__)

PROG = "u5mr-apc"
DEFAULT_DRAWS = 1000


class Run:
    """Output directory of one subcommand; files created through ``path`` are listed
    in the manifest, or removed when the run fails."""

    def __init__(self, command: str, out: Path, args: argparse.Namespace):
        self.command = command
        self.out = Path(out)
        self.args = args
        self.outputs: list[Path] = []
        self.started = time.perf_counter()
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self.manifest: Optional[Path] = None

    def path(self, name: str) -> Path:
        path = self.out / name
        self.outputs.append(path)
        return path

    def lap(self, name: str) -> None:
        self.timings[name] = round(time.perf_counter() - self.started, 3)

    def discard(self) -> None:
        for path in self.outputs + ([self.manifest] if self.manifest else []):
            if path.exists():
                path.unlink()

    def write_manifest(self) -> Path:
        self.lap("total")
        echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items() if k != "handler"}
        manifest = {
            "command": self.command,
            "arguments": echo,
            "seed": getattr(self.args, "seed", None),
            "versions": {
                "u5mr_apc": __version__, "python": platform.python_version(), "numpy": np.__version__,
                "scipy": scipy.__version__, "pandas": pd.__version__,
            },
            "timings": self.timings,
            **self.extra,
            "outputs": [
                {"file": p.name, "bytes": p.stat().st_size, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
                for p in self.outputs if p.exists()
            ],
        }
        self.manifest = self.out / "manifest.json"
        self.manifest.write_text(json.dumps(manifest, indent=2) + "\n")
        return self.manifest


# ---------------------------------------------------------------------------
# shared inputs

def _model_config(args) -> ModelConfig:
    config = load_model_config(args.config)
    if getattr(args, "variant", None):
        config = config.with_variant(args.variant)
    return config


def _survey_inputs(args, config: ModelConfig):
    graph = None
    if getattr(args, "adjacency", None):
        graph = read_polygons(args.adjacency) if args.adjacency.suffix == ".json" else read_adjacency(args.adjacency)
    load = load_survey_csv(args.survey, None if graph is None else set(graph.regions))
    if load.rejections.shape[0]:
        logger.warning("%d survey rows rejected", load.rejections.shape[0])
    if not load.records:
        raise ConfigError(f"{args.survey}: no valid birth record")
    person_months = expand_survey(load.records, config.schema)
    if getattr(args, "periods", None):
        first, last = args.periods
        if first > last:
            raise ConfigError(f"--periods {first} {last} is an empty range")
        person_months = person_months[person_months["period"].between(first, last)].reset_index(drop=True)
        if person_months.empty:
            raise ConfigError(f"no exposure in periods {first}-{last}")
    cells = aggregate_cells(person_months)
    logger.info("%d person-month rows in %d count cells", len(person_months), len(cells))
    return graph, load, person_months, cells


def _forecast(periods: list[int], horizon: int) -> list[int]:
    if horizon < 0:
        raise ConfigError(f"--horizon must be non-negative, got {horizon}")
    return list(range(periods[-1] + 1, periods[-1] + 1 + horizon))


def _estimates(model, draws, periods, forecast, proportions, config) -> pd.DataFrame:
    u5mr = u5mr_draws(model, draws, periods + forecast, None, config.collapse, config.schema)
    table = summary_table(u5mr, proportions)
    table["source"] = np.where(table["period"].isin(forecast), "forecast", "estimate")
    return table[SUMMARY_COLUMNS + ["source"]]


# ---------------------------------------------------------------------------
# subcommands

def cmd_expand(args, run: Run) -> None:
    config = _model_config(args)
    _, load, person_months, cells = _survey_inputs(args, config)
    cells.to_csv(run.path("cells.csv"), index=False)
    person_months.to_csv(run.path("person_months.csv"), index=False, float_format="%.10g")
    write_rejections(load.rejections, run.path("rejections.csv"))
    run.extra["counts"] = {"records": len(load.records), "rejected": int(load.rejections.shape[0]),
                           "cells": len(cells)}


def cmd_simulate(args, run: Run) -> None:
    config = load_synth_config(args.config) if args.config else SynthConfig()
    population = generate_population(config, args.seed)
    run.lap("population")
    design = SurveyDesign(args.clusters, args.households, jitter=not args.no_jitter)
    survey = draw_survey(population, design, args.seed)
    run.lap("survey")
    write_simulation(population, survey, run.out, output=run.path)
    run.extra["counts"] = {"clusters": len(survey.clusters), "records": len(survey.records),
                           "strata": population.n_strata}


def cmd_fit(args, run: Run) -> None:
    config = _model_config(args)
    if args.integration:
        config = dataclasses.replace(config, optimizer=dataclasses.replace(config.optimizer, integration=args.integration))
    graph, _, _, cells = _survey_inputs(args, config)
    proportions = read_proportions(args.proportions)
    periods = sorted(int(p) for p in cells["period"].unique())
    forecast = _forecast(periods, args.horizon)
    model = config.assemble(cells, graph, extra=period_grid(periods + forecast, config.schema))
    result = fit(model, config.optimizer)
    run.lap("fit")
    draws = result.sample(args.draws, args.seed)
    residual = np.abs(draws.latent @ model.constraints.T - model.rhs).max() if model.constraints.size else 0.0
    logger.info("%d draws, largest constraint residual %.2e", draws.n_draws, residual)
    estimates = _estimates(model, draws, periods, forecast, proportions, config)
    run.lap("aggregate")
    age = pd.concat([
        age_specific_hazards(model, draws, periods, by=by, schema=config.schema)
        .rename(columns={by: "time"}).assign(by=by)
        for by in ("period", "cohort")
    ], ignore_index=True)[["by", "age_band", "time", "median", "lower", "upper"]]

    record = {**result.to_dict(), "config": config.to_dict(), "periods": periods, "horizon": args.horizon,
              "draws": args.draws, "seed": args.seed}
    run.path("fit.json").write_text(json.dumps(record, indent=2) + "\n")
    result.report_frame().to_csv(run.path("fit_report.csv"), index=False, float_format="%.8g")
    result.parameter_summary(draws).to_csv(run.path("parameter_summary.csv"), index=False, float_format="%.8g")
    estimates.to_csv(run.path("estimates.csv"), index=False, float_format="%.6f")
    age.to_csv(run.path("age_specific.csv"), index=False, float_format="%.6f")


def cmd_predict(args, run: Run) -> None:
    record = read_json(args.fit)
    try:
        config = ModelConfig.from_dict(record["config"])
        names, internal = record["hyper_names"], record["internal"]
    except KeyError as exc:
        raise ConfigError(f"{args.fit}: missing {exc.args[0]}") from None
    graph, _, _, cells = _survey_inputs(args, config)
    proportions = read_proportions(args.proportions)
    periods = sorted(int(p) for p in cells["period"].unique())
    horizon = record.get("horizon", 0) if args.horizon is None else args.horizon
    forecast = _forecast(periods, horizon)
    model = config.assemble(cells, graph, extra=period_grid(periods + forecast, config.schema))
    if tuple(names) != model.hyper_names:
        raise ConfigError(f"{args.fit} was fitted with hyperparameters {names}, the model has {model.hyper_names}")
    theta = HyperParams.from_internal(names, np.asarray(internal, dtype=float))
    approx = refit_at(model, theta, config.optimizer)
    draws = sample_latent(model, approx, args.draws, args.seed)
    estimates = _estimates(model, draws, periods, forecast, proportions, config)
    estimates[estimates["source"] == "forecast"].to_csv(run.path("predictions.csv"), index=False, float_format="%.6f")


def cmd_direct(args, run: Run) -> None:
    config = _model_config(args)
    _, _, person_months, _ = _survey_inputs(args, config)
    table = direct_table(person_months, config.schema)
    table.to_csv(run.path("direct.csv"), index=False, float_format="%.10g")
    periods = sorted(int(p) for p in person_months["period"].unique())
    smoothed = fay_herriot_smooth(
        estimates_from_table(table, NATIONAL), _forecast(periods, args.horizon), args.draws, args.seed,
        config.optimizer,
    )
    smoothed.to_csv(run.path("fay_herriot.csv"), index=False, float_format="%.6f")


def cmd_cv(args, run: Run) -> None:
    config = _model_config(args)
    graph, _, person_months, cells = _survey_inputs(args, config)
    proportions = read_proportions(args.proportions)
    holdout = int(cells["period"].max()) if args.holdout is None else args.holdout
    direct = direct_table(person_months, config.schema, periods=[holdout], national=False)
    variants = [args.variant] if args.variant else list(VARIANTS)
    frames, scores = [], {}
    for variant in variants:
        result = loro_cv(cells, graph, config.with_variant(variant), holdout, direct, proportions,
                         args.draws, args.seed)
        run.lap(f"cv_{variant}")
        frames.append(result.frame())
        scores[variant] = score_cv(result.predictions)
        if result.failures:
            run.extra.setdefault("failures", {})[variant] = result.failures
    pd.concat(frames, ignore_index=True).to_csv(run.path("cv_predictions.csv"), index=False, float_format="%.6f")
    write_scores(scores_table(scores), run.path("scores.csv"))


def cmd_report(args, run: Run) -> None:
    write_report(args.fit_dir, run.out, args.cv_dir, args.direct, args.png, output=run.path)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Spatio-temporal age-period-cohort estimates of under-five mortality from survey birth histories.",
        epilog="Environment: U5MR_APC_WORKERS sets the number of worker processes for cv refits (default 1).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name: str, handler, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(handler=handler)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: current)")
        return p

    def survey(p, adjacency: bool = True, proportions: bool = False) -> None:
        p.add_argument("--survey", type=Path, required=True, help="birth-history CSV")
        p.add_argument("--periods", type=int, nargs=2, metavar=("FIRST", "LAST"),
                       help="restrict exposure to these calendar years")
        p.add_argument("--config", type=Path, help="model configuration JSON")
        if adjacency:
            p.add_argument("--adjacency", type=Path, required=True, help="region adjacency file, or polygons as JSON")
        if proportions:
            p.add_argument("--proportions", type=Path, required=True,
                           help="CSV with period, region_id, q_rural, w_national")

    def sampling(p, horizon: Optional[int] = 0) -> None:
        p.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help=f"posterior draws (default {DEFAULT_DRAWS})")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--horizon", type=int, default=horizon, help="forecast years after the last period")

    p = command("expand", cmd_expand, "validate birth histories and build person-month cells")
    survey(p, adjacency=False)
    p.add_argument("--adjacency", type=Path, help="reject records of regions absent from this graph")

    p = command("simulate", cmd_simulate, "generate a synthetic population and survey")
    p.add_argument("--config", type=Path, help="synthetic population JSON")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--clusters", type=int, default=17, help="clusters per stratum (default 17)")
    p.add_argument("--households", type=int, default=25, help="households per cluster (default 25)")
    p.add_argument("--no-jitter", action="store_true", help="keep exact cluster coordinates")

    p = command("fit", cmd_fit, "fit the model and write estimates and forecasts")
    survey(p, proportions=True)
    sampling(p, horizon=0)
    p.add_argument("--variant", choices=VARIANTS, help="temporal model (default from config, APC)")
    p.add_argument("--integration", choices=("eb", "ccd"), help="hyperparameter integration")

    p = command("predict", cmd_predict, "forecast from a previous fit")
    survey(p, proportions=True)
    sampling(p, horizon=None)
    p.add_argument("--fit", type=Path, required=True, help="fit.json written by fit")

    p = command("direct", cmd_direct, "design-based direct estimates and national smoothing")
    survey(p, adjacency=False)
    sampling(p, horizon=0)

    p = command("cv", cmd_cv, "leave-one-region-out cross-validation of a held-out year")
    survey(p, proportions=True)
    p.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help=f"posterior draws (default {DEFAULT_DRAWS})")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--holdout", type=int, help="held-out period (default: last)")
    p.add_argument("--variant", choices=VARIANTS, help="single variant (default: all)")

    p = command("report", cmd_report, "plot-ready tables from fit, direct and cv outputs")
    p.add_argument("--fit-dir", type=Path, required=True, help="directory written by fit")
    p.add_argument("--cv-dir", type=Path, help="directory written by cv")
    p.add_argument("--direct", type=Path, help="direct.csv written by direct")
    p.add_argument("--png", action="store_true", help="also render the national trajectories")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    if getattr(args, "draws", 1) < 1:
        parser.error("--draws must be positive")
    run = Run(args.command, args.out, args)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        args.handler(args, run)
        run.write_manifest()
    except (U5mrError, OSError, ValueError) as exc:
        run.discard()
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    logger.info("%s: %d files written to %s", args.command, len(run.outputs), args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
