"""Design-based direct U5MR estimates and Fay-Herriot smoothing over time."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import expit, logit

from .aggregate import DEFAULT_QUANTILES, u5mr_from_hazards
from .config import OptimizerConfig
from .data import DEFAULT_SCHEMA, AgeBandSchema
from .errors import EstimateUndefinedError
from .inference import fit
from .model import FixedEffects, ScaledStructure, gaussian_model
from .priors import PcPriorSpec
from .structure import StructuredPrecision
from .temporal import TemporalAxis, rw2_precision, slope_covariate

logger = logging.getLogger(__name__)

NATIONAL = "national"
DIRECT_COLUMNS = ["region", "period", "logit_u5mr", "variance", "n_clusters", "defined", "u5mr", "method"]
FH_SPECS = {"tau_trend": PcPriorSpec(1.0, 0.01), "tau_noise": PcPriorSpec(1.0, 0.01)}
MIN_VARIANCE = 1e-10


@dataclass(frozen=True)
class DirectEstimate:
    region: str
    period: int
    logit_u5mr: float
    variance: float
    n_clusters: int
    defined: bool
    method: str = "jackknife"
    hazards: tuple[float, ...] = field(default=(), compare=False)

    @property
    def u5mr(self) -> float:
        return float(expit(self.logit_u5mr)) if np.isfinite(self.logit_u5mr) else math.nan

    def as_row(self) -> dict:
        return {
            "region": self.region, "period": self.period, "logit_u5mr": self.logit_u5mr,
            "variance": self.variance, "n_clusters": self.n_clusters, "defined": self.defined,
            "u5mr": self.u5mr, "method": self.method,
        }


def _band_sums(rows: pd.DataFrame, n_bands: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Weighted deaths and months per (cluster, band), plus cluster ids and strata."""
    rows = rows.assign(
        wdied=rows["weight"] * rows["died"],
        wmonths=rows["weight"] * rows["months"],
        stratum=rows["region_id"].astype(str) + "|" + rows["urban"].astype(int).astype(str),
    )
    grouped = rows.groupby(["stratum", "cluster_id", "age_band"], sort=True)[["wdied", "wmonths"]].sum()
    clusters = grouped.index.droplevel("age_band").unique()
    deaths = np.zeros((len(clusters), n_bands))
    months = np.zeros((len(clusters), n_bands))
    position = {key: i for i, key in enumerate(clusters)}
    for (stratum, cluster, band), values in grouped.iterrows():
        i = position[(stratum, cluster)]
        deaths[i, int(band)] = values["wdied"]
        months[i, int(band)] = values["wmonths"]
    strata = np.asarray([key[0] for key in clusters])
    return deaths, months, strata, np.asarray([key[1] for key in clusters])


def _u5mr_from_sums(deaths: np.ndarray, months: np.ndarray, schema: AgeBandSchema) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        hazards = np.where(months > 0, deaths / months, 0.0)
    return u5mr_from_hazards(np.clip(hazards, 0.0, 1.0), schema)


def _jackknife(values: np.ndarray, strata: np.ndarray) -> float:
    total = 0.0
    for stratum in np.unique(strata):
        members = values[strata == stratum]
        n_h = members.size
        if n_h < 2:
            continue
        total += (n_h - 1) / n_h * float(np.sum((members - members.mean()) ** 2))
    return total


def _estimate(rows: pd.DataFrame, region: str, period: int, schema: AgeBandSchema) -> DirectEstimate:
    deaths, months, strata, _ = _band_sums(rows, schema.n_bands)
    n_clusters = deaths.shape[0]
    total_deaths, total_months = deaths.sum(axis=0), months.sum(axis=0)
    if np.any(total_months <= 0):
        logger.debug("%s %d: an age band has no exposure", region, period)
        return DirectEstimate(region, period, math.nan, math.nan, n_clusters, False, "")
    hazards = total_deaths / total_months
    u5mr = float(u5mr_from_hazards(hazards, schema))
    if total_deaths.sum() <= 0 or u5mr >= 1.0:
        return DirectEstimate(region, period, math.nan, math.nan, n_clusters, False, "", tuple(hazards))
    point = float(logit(u5mr))
    if n_clusters < 2:
        return DirectEstimate(region, period, point, math.nan, n_clusters, False, "", tuple(hazards))

    # delete-one-cluster replicates, the remaining clusters of the stratum reweighted by n_h / (n_h - 1)
    stratum_deaths = np.zeros_like(deaths)
    stratum_months = np.zeros_like(months)
    sizes = np.zeros(n_clusters)
    for stratum in np.unique(strata):
        members = strata == stratum
        stratum_deaths[members] = deaths[members].sum(axis=0)
        stratum_months[members] = months[members].sum(axis=0)
        sizes[members] = members.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(sizes > 1, sizes / (sizes - 1), 0.0)[:, None]
    rep_deaths = total_deaths - stratum_deaths + factor * (stratum_deaths - deaths)
    rep_months = total_months - stratum_months + factor * (stratum_months - months)
    single = sizes < 2
    rep_deaths[single] = total_deaths
    rep_months[single] = total_months
    replicates = _u5mr_from_sums(rep_deaths, rep_months, schema)
    if np.all((replicates > 0) & (replicates < 1)):
        variance = _jackknife(logit(replicates), strata)
        method = "jackknife"
    else:
        variance = _jackknife(replicates, strata) / (u5mr * (1.0 - u5mr)) ** 2
        method = "delta"
    return DirectEstimate(region, period, point, float(variance), n_clusters, True, method, tuple(hazards))


def direct_u5mr(
    person_months: pd.DataFrame,
    region: str,
    period: int,
    schema: AgeBandSchema = DEFAULT_SCHEMA,
) -> DirectEstimate:
    """Weighted-ratio hazards for one region-period with a delete-one-cluster
    jackknife variance of logit U5MR within urban/rural strata.

    ``region`` may be ``"national"`` to pool every region.
    """
    rows = person_months[person_months["period"] == period]
    if region != NATIONAL:
        rows = rows[rows["region_id"] == region]
    rows = rows[rows["months"] > 0]
    if rows.empty:
        raise EstimateUndefinedError(f"no clusters with exposure in {region} {period}")
    estimate = _estimate(rows, region, int(period), schema)
    if not estimate.defined:
        logger.warning("direct estimate for %s %d is undefined", region, period)
    return estimate


def direct_table(
    person_months: pd.DataFrame,
    schema: AgeBandSchema = DEFAULT_SCHEMA,
    periods: Optional[Sequence[int]] = None,
    national: bool = True,
) -> pd.DataFrame:
    """Direct estimates for every observed region-period and, optionally,
    the pooled national series."""
    periods = sorted(person_months["period"].unique().tolist()) if periods is None else list(periods)
    regions = sorted(person_months["region_id"].astype(str).unique().tolist())
    rows = []
    for period in periods:
        for region in ([NATIONAL] if national else []) + regions:
            try:
                rows.append(direct_u5mr(person_months, region, period, schema).as_row())
            except EstimateUndefinedError:
                continue
    table = pd.DataFrame(rows, columns=DIRECT_COLUMNS)
    logger.info("direct estimates: %d region-periods, %d defined", len(table), int(table["defined"].sum()))
    return table


def estimates_from_table(table: pd.DataFrame, region: str) -> list[DirectEstimate]:
    rows = table[table["region"] == region].sort_values("period")
    return [
        DirectEstimate(r.region, int(r.period), float(r.logit_u5mr), float(r.variance), int(r.n_clusters),
                       bool(r.defined), str(r.method) if isinstance(r.method, str) else "")
        for r in rows.itertuples(index=False)
    ]


def fay_herriot_smooth(
    series: Sequence[DirectEstimate],
    extra_periods: Sequence[int] = (),
    n_draws: int = 1000,
    seed: int = 0,
    config: Optional[OptimizerConfig] = None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> pd.DataFrame:
    """Smooth a series of direct estimates on the logit scale.

    The latent level is an intercept, a slope, an RW2 curvature and iid noise;
    observation variances are the design variances.  Periods without a
    defined estimate, and ``extra_periods``, are predicted.
    """
    defined = [e for e in series if e.defined and np.isfinite(e.variance)]
    if not defined:
        raise EstimateUndefinedError("no defined direct estimate to smooth")
    if len(defined) < 3:
        raise EstimateUndefinedError(f"smoothing needs at least 3 defined periods, got {len(defined)}")
    periods = sorted({e.period for e in series} | {int(p) for p in extra_periods})
    axis = TemporalAxis.years("period", periods[0], periods[-1])
    n = axis.size
    position = {int(p): i for i, p in enumerate(axis.values)}
    observed = np.array([position[e.period] for e in defined])

    slope = slope_covariate(axis, axis.array)
    level = sp.hstack([
        sp.csr_matrix(np.column_stack([np.ones(n), slope])),
        sp.identity(n, format="csr"),
        sp.identity(n, format="csr"),
    ], format="csr")
    blocks = [
        FixedEffects(("intercept", "slope")),
        ScaledStructure("trend", rw2_precision(axis, scale=True), "tau_trend"),
        ScaledStructure("noise", StructuredPrecision(sp.identity(n), 0, np.zeros((0, n)), np.zeros(0)), "tau_noise"),
    ]
    model = gaussian_model(
        level[observed],
        [e.logit_u5mr for e in defined],
        [max(e.variance, MIN_VARIANCE) for e in defined],
        blocks,
        FH_SPECS,
    )
    result = fit(model, config)
    draws = result.sample(n_draws, seed)
    latent = draws.linear_predictor(level)
    q = sorted(quantiles)
    bounds = np.quantile(latent, q, axis=0)
    direct = {e.period: e for e in series}
    rows = []
    for i, period in enumerate(axis.values):
        estimate = direct.get(int(period))
        rows.append({
            "period": int(period),
            "direct_logit": estimate.logit_u5mr if estimate else math.nan,
            "direct_variance": estimate.variance if estimate else math.nan,
            "observed": i in set(observed.tolist()),
            "logit_median": bounds[len(q) // 2, i],
            "logit_lower": bounds[0, i],
            "logit_upper": bounds[-1, i],
            "median": 1000.0 * expit(bounds[len(q) // 2, i]),
            "lower": 1000.0 * expit(bounds[0, i]),
            "upper": 1000.0 * expit(bounds[-1, i]),
        })
    return pd.DataFrame(rows)
