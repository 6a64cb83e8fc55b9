"""Leave-one-region-out cross-validation against direct estimates."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logit

from .aggregate import StratumProportions, strata_aggregate, u5mr_draws
from .config import ModelConfig, workers_from_env
from .errors import ParameterError, U5mrError
from .inference import fit, optimize_hyper
from .model import HyperParams
from .spatial import AdjacencyGraph
from .temporal import period_grid

logger = logging.getLogger(__name__)

ALPHAS = (0.5, 0.05)
SCORE_COLUMNS = ["model", "MAE", "MSE", "variance", "IS@0.50", "coverage@0.50", "IS@0.05", "coverage@0.05", "n_regions"]
PREDICTION_COLUMNS = ["model", "region", "period", "direct", "direct_variance", "median", "lower", "upper"]


@dataclass
class CVPrediction:
    """Draws of the held-out region-period on the logit scale.

    ``noisy`` adds the design variance of the direct estimate to every draw.
    """

    region: str
    period: int
    draws: np.ndarray
    noisy: np.ndarray
    direct: float
    variance: float
    model: str = ""

    def __post_init__(self):
        if self.draws.shape != self.noisy.shape:
            raise ParameterError("raw and noisy draws must have the same length")

    def as_row(self) -> dict:
        lower, median, upper = np.quantile(self.noisy, [0.025, 0.5, 0.975])
        return {"model": self.model, "region": self.region, "period": self.period, "direct": self.direct,
                "direct_variance": self.variance, "median": median, "lower": lower, "upper": upper}


@dataclass
class CrossValidation:
    predictions: list[CVPrediction]
    failures: dict[str, str] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.as_row() for p in self.predictions], columns=PREDICTION_COLUMNS)


@dataclass(frozen=True)
class _RefitTask:
    cells: pd.DataFrame
    graph: AdjacencyGraph
    config: ModelConfig
    region: str
    period: int
    start: Optional[tuple[float, ...]]
    n_draws: int
    seed: int
    q_rural: float
    direct: float
    variance: float


def _refit(task: _RefitTask) -> CVPrediction:
    held_out = (task.cells["region_id"] == task.region) & (task.cells["period"] == task.period)
    reduced = task.cells[~held_out].reset_index(drop=True)
    schema = task.config.schema
    model = task.config.assemble(reduced, task.graph, extra=period_grid([task.period], schema))
    theta0 = None if task.start is None else HyperParams.from_internal(model.hyper_names, np.asarray(task.start))
    result = fit(model, task.config.optimizer, theta0)
    draws = result.sample(task.n_draws, task.seed)
    u5mr = u5mr_draws(model, draws, [task.period], [task.region], task.config.collapse, schema)
    region = strata_aggregate(u5mr.rural[0, 0], u5mr.urban[0, 0], task.q_rural)
    predicted = logit(np.clip(region, 1e-12, 1.0 - 1e-12))
    rng = np.random.default_rng([task.seed, 1])
    noisy = predicted + math.sqrt(task.variance) * rng.standard_normal(predicted.size)
    return CVPrediction(task.region, task.period, predicted, noisy, task.direct, task.variance, task.config.variant)


def _run(task: _RefitTask) -> tuple[str, Optional[CVPrediction], str]:
    try:
        return task.region, _refit(task), ""
    except U5mrError as exc:
        return task.region, None, str(exc)


def loro_cv(
    cells: pd.DataFrame,
    graph: AdjacencyGraph,
    config: ModelConfig,
    holdout_period: int,
    direct: pd.DataFrame,
    proportions: StratumProportions,
    n_draws: int = 1000,
    seed: int = 0,
    theta_start: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
) -> CrossValidation:
    """Refit without each region's cells of ``holdout_period`` and predict them.

    Regions whose direct estimate is undefined are skipped; refit failures
    are recorded and the region is left out of the predictions.
    """
    if holdout_period not in set(cells["period"].astype(int)):
        raise ParameterError(f"holdout period {holdout_period} is not in the data")
    workers = workers_from_env() if workers is None else workers
    schema = config.schema
    if theta_start is None:
        full = config.assemble(cells, graph, extra=period_grid([holdout_period], schema))
        theta_start = optimize_hyper(full, None, config.optimizer).internal
    start = tuple(float(v) for v in theta_start)

    benchmark = direct[(direct["period"] == holdout_period) & direct["defined"].astype(bool)]
    benchmark = benchmark.set_index("region")
    observed = set(cells.loc[cells["period"] == holdout_period, "region_id"])
    regions = [r for r in graph.regions if r in observed]
    children = np.random.SeedSequence(seed).spawn(len(regions))
    q = dict(zip(regions, proportions.q(holdout_period, regions)))
    tasks, skipped = [], []
    for region, child in zip(regions, children):
        if region not in benchmark.index:
            logger.warning("no defined direct estimate for %s in %d, region skipped", region, holdout_period)
            skipped.append(region)
            continue
        row = benchmark.loc[region]
        tasks.append(_RefitTask(
            cells, graph, config, region, int(holdout_period), start, n_draws,
            int(child.generate_state(1)[0]), float(q[region]), float(row["logit_u5mr"]), float(row["variance"]),
        ))
    logger.info("cross-validating %s on %d regions with %d worker(s)", config.variant, len(tasks), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run, tasks))
    else:
        outcomes = [_run(task) for task in tasks]

    predictions, failures = [], {}
    for region, prediction, message in outcomes:
        if prediction is None:
            logger.warning("refit without %s failed: %s", region, message)
            failures[region] = message
        else:
            logger.debug("held-out %s predicted", region)
            predictions.append(prediction)
    return CrossValidation(predictions, failures, skipped)


def interval_score(lower, upper, y, alpha: float):
    """``(u - l) + 2/alpha (l - y) 1[y < l] + 2/alpha (y - u) 1[y > u]``."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    lower, upper, y = (np.asarray(v, dtype=float) for v in (lower, upper, y))
    if np.any(lower > upper):
        raise ParameterError("interval lower bound exceeds the upper bound")
    score = (upper - lower) + (2.0 / alpha) * (
        (lower - y) * (y < lower) + (y - upper) * (y > upper)
    )
    return float(score) if score.ndim == 0 else score


def score_cv(predictions: Sequence[CVPrediction], alphas: Sequence[float] = ALPHAS) -> dict:
    """Mean absolute and squared errors over regions and draws, predictive
    variance, and interval scores and coverage (in %) at each ``alpha``."""
    if not predictions:
        raise ParameterError("no cross-validation predictions to score")
    errors = [p.noisy - p.direct for p in predictions]
    scores = {
        "MAE": float(np.mean([np.mean(np.abs(e)) for e in errors])),
        "MSE": float(np.mean([np.mean(e**2) for e in errors])),
        "variance": float(np.mean([np.var(p.noisy) for p in predictions])),
    }
    for alpha in alphas:
        bounds = np.array([np.quantile(p.noisy, [alpha / 2, 1 - alpha / 2]) for p in predictions])
        y = np.array([p.direct for p in predictions])
        scores[f"IS@{alpha:.2f}"] = float(np.mean(interval_score(bounds[:, 0], bounds[:, 1], y, alpha)))
        scores[f"coverage@{alpha:.2f}"] = float(100.0 * np.mean((y >= bounds[:, 0]) & (y <= bounds[:, 1])))
    scores["n_regions"] = len(predictions)
    return scores


def scores_table(scores: Mapping[str, dict]) -> pd.DataFrame:
    """One row per model in the order given."""
    rows = [{"model": name, **values} for name, values in scores.items()]
    return pd.DataFrame(rows).reindex(columns=SCORE_COLUMNS)


def write_scores(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, float_format="%.6f")
