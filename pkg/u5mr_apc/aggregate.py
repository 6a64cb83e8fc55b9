"""From linear-predictor draws to U5MR at stratum, region and national level."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import DEFAULT_SCHEMA, AgeBandSchema
from .errors import ParameterError
from .inference import PosteriorDraws
from .model import LatentModel
from .temporal import cohort_weights, period_grid

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.025, 0.5, 0.975)
PROPORTION_COLUMNS = ["period", "region_id", "q_rural", "w_national"]
SUMMARY_COLUMNS = ["level", "region", "period", "stratum", "median", "lower", "upper", "width", "N"]


def u5mr_from_hazards(h, schema: AgeBandSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """``1 - prod (1 - h_i)^z_i`` over the last axis, evaluated in log space."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != schema.n_bands:
        raise ParameterError(f"expected {schema.n_bands} hazards on the last axis, got {h.shape[-1]}")
    if np.any((h < 0) | (h > 1)) or np.any(np.isnan(h)):
        raise ParameterError("hazards must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        log_survival = np.sum(schema.widths * np.log1p(-h), axis=-1)
    return -np.expm1(log_survival)


def strata_aggregate(rural, urban, q) -> np.ndarray:
    """Drawwise ``rural * q + urban * (1 - q)``."""
    rural = np.asarray(rural, dtype=float)
    urban = np.asarray(urban, dtype=float)
    if rural.shape != urban.shape:
        raise ParameterError(f"rural draws {rural.shape} and urban draws {urban.shape} differ in shape")
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ParameterError("rural proportions must lie in [0, 1]")
    return rural * q + urban * (1.0 - q)


def national_aggregate(region_draws, w, tol: float = 1e-6) -> np.ndarray:
    """Drawwise weighted sum over the last axis (regions)."""
    region_draws = np.asarray(region_draws, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ParameterError("national weights must be non-negative")
    if abs(w.sum() - 1.0) > tol:
        raise ParameterError(f"national weights sum to {w.sum():.8f}, not 1")
    return region_draws @ w


@dataclass(frozen=True)
class U5MRSummary:
    level: str
    period: int
    median: float
    lower: float
    upper: float
    n: int
    region: Optional[str] = None
    stratum: Optional[str] = None

    def __post_init__(self):
        if not self.lower <= self.median <= self.upper:
            raise ParameterError("summary quantiles are not ordered")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def as_row(self) -> dict:
        return {
            "level": self.level, "region": self.region or "", "period": self.period,
            "stratum": self.stratum or "", "median": self.median, "lower": self.lower,
            "upper": self.upper, "width": self.width, "N": self.n,
        }


def summarize(
    draws,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    *,
    level: str = "national",
    period: int = 0,
    region: Optional[str] = None,
    stratum: Optional[str] = None,
) -> U5MRSummary:
    """Empirical quantiles per 1000 live births: lower, median and upper are
    the first, middle and last of ``quantiles``."""
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size == 0:
        raise ParameterError("cannot summarise an empty set of draws")
    if draws.size < 2:
        raise ParameterError("at least two draws are needed for interval summaries")
    values = 1000.0 * np.quantile(draws, sorted(quantiles))
    return U5MRSummary(
        level=level, period=int(period), median=float(values[len(values) // 2]),
        lower=float(values[0]), upper=float(values[-1]), n=draws.size, region=region, stratum=stratum,
    )


# ---------------------------------------------------------------------------
# proportions

@dataclass(frozen=True)
class StratumProportions:
    """Rural shares ``q`` per (period, region) and national weights ``w``."""

    table: pd.DataFrame

    def __post_init__(self):
        table = self.table
        absent = [c for c in PROPORTION_COLUMNS if c not in table.columns]
        if absent:
            raise ParameterError(f"proportions table misses columns {', '.join(absent)}")
        table = table[PROPORTION_COLUMNS].copy()
        table["period"] = table["period"].astype(int)
        table["region_id"] = table["region_id"].astype(str)
        if ((table["q_rural"] < 0) | (table["q_rural"] > 1)).any():
            raise ParameterError("q_rural must lie in [0, 1]")
        sums = table.groupby("period")["w_national"].sum()
        bad = sums[(sums - 1.0).abs() > 1e-6]
        if len(bad):
            raise ParameterError(f"national weights do not sum to 1 in periods {bad.index.tolist()}")
        object.__setattr__(self, "table", table.sort_values(["period", "region_id"]).reset_index(drop=True))

    @property
    def periods(self) -> list[int]:
        return sorted(self.table["period"].unique().tolist())

    def _period_rows(self, period: int) -> pd.DataFrame:
        """Rows of ``period``, or of the nearest available period outside the table."""
        available = np.asarray(self.periods)
        nearest = int(available[np.argmin(np.abs(available - period))])
        return self.table[self.table["period"] == nearest].set_index("region_id")

    def q(self, period: int, regions: Sequence[str]) -> np.ndarray:
        rows = self._period_rows(period)
        missing = sorted(set(regions) - set(rows.index))
        if missing:
            raise ParameterError(f"no proportions for regions {missing[:5]}")
        return rows.loc[list(regions), "q_rural"].to_numpy(dtype=float)

    def w(self, period: int, regions: Sequence[str]) -> np.ndarray:
        rows = self._period_rows(period)
        missing = sorted(set(regions) - set(rows.index))
        if missing:
            raise ParameterError(f"no national weights for regions {missing[:5]}")
        return rows.loc[list(regions), "w_national"].to_numpy(dtype=float)


def read_proportions(path) -> StratumProportions:
    return StratumProportions(pd.read_csv(path, dtype={"region_id": str}))


def write_proportions(proportions: StratumProportions, path) -> None:
    proportions.table.to_csv(path, index=False, float_format="%.10g")


# ---------------------------------------------------------------------------
# draws of U5MR

@dataclass
class U5mrDraws:
    """Stratum U5MR draws with shape ``(region, period, draw)``."""

    regions: list[str]
    periods: list[int]
    rural: np.ndarray
    urban: np.ndarray

    def region_draws(self, proportions: StratumProportions) -> np.ndarray:
        out = np.empty_like(self.rural)
        for j, period in enumerate(self.periods):
            q = proportions.q(period, self.regions)
            out[:, j, :] = strata_aggregate(self.rural[:, j, :], self.urban[:, j, :], q[:, None])
        return out

    def national_draws(self, proportions: StratumProportions) -> np.ndarray:
        regional = self.region_draws(proportions)
        out = np.empty((len(self.periods), regional.shape[2]))
        for j, period in enumerate(self.periods):
            out[j] = national_aggregate(regional[:, j, :].T, proportions.w(period, self.regions))
        return out


def _collapsed_grid(periods: Sequence[int], schema: AgeBandSchema, collapse: str) -> pd.DataFrame:
    return cohort_weights(period_grid(periods, schema), collapse)


def _hazards_by_band(hazards: np.ndarray, grid: pd.DataFrame, periods: Sequence[int], n_bands: int) -> np.ndarray:
    """Collapse hazards of grid rows ``(draw, row)`` to ``(draw, period, band)``."""
    weighted = hazards * grid["weight"].to_numpy()
    period_pos = {p: j for j, p in enumerate(periods)}
    slot = grid["period"].map(period_pos).to_numpy() * n_bands + grid["age_band"].to_numpy()
    out = np.zeros((hazards.shape[0], len(periods) * n_bands))
    for column in range(out.shape[1]):
        members = np.flatnonzero(slot == column)
        out[:, column] = weighted[:, members].sum(axis=1)
    return out.reshape(hazards.shape[0], len(periods), n_bands)


def u5mr_draws(
    model: LatentModel,
    draws: PosteriorDraws,
    periods: Sequence[int],
    regions: Optional[Sequence[str]] = None,
    collapse: str = "dominant",
    schema: AgeBandSchema = DEFAULT_SCHEMA,
) -> U5mrDraws:
    """Rural and urban U5MR draws for every region and period.

    Hazards come from the linear predictor of the month-level prediction grid;
    a (band, period) spread over several cohorts uses the dominant cohort or a
    month-weighted hazard average.
    """
    periods = sorted(int(p) for p in periods)
    regions = list(model.graph.regions if regions is None else regions)
    grid = _collapsed_grid(periods, schema, collapse)
    n = draws.n_draws
    rural = np.empty((len(regions), len(periods), n))
    urban = np.empty_like(rural)
    for i, region in enumerate(regions):
        for urban_flag, target in ((0, rural), (1, urban)):
            frame = grid.assign(region_id=region, urban=urban_flag)
            hazards = expit(draws.linear_predictor(model.design_for(frame)))
            by_band = _hazards_by_band(hazards, grid, periods, schema.n_bands)
            target[i] = u5mr_from_hazards(by_band, schema).T
    logger.debug("U5MR draws for %d regions x %d periods", len(regions), len(periods))
    return U5mrDraws(regions, periods, rural, urban)


def summary_table(
    u5mr: U5mrDraws,
    proportions: StratumProportions,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    strata: bool = True,
) -> pd.DataFrame:
    """Long table of stratum, region and national summaries."""
    rows = []
    regional = u5mr.region_draws(proportions)
    national = u5mr.national_draws(proportions)
    for j, period in enumerate(u5mr.periods):
        rows.append(summarize(national[j], quantiles, level="national", period=period).as_row())
        for i, region in enumerate(u5mr.regions):
            rows.append(summarize(regional[i, j], quantiles, level="region", period=period, region=region).as_row())
            if strata:
                for name, values in (("rural", u5mr.rural), ("urban", u5mr.urban)):
                    rows.append(
                        summarize(values[i, j], quantiles, level="stratum", period=period,
                                  region=region, stratum=name).as_row()
                    )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def age_specific_hazards(
    model: LatentModel,
    draws: PosteriorDraws,
    periods: Sequence[int],
    by: str = "period",
    schema: AgeBandSchema = DEFAULT_SCHEMA,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> pd.DataFrame:
    """National rural-baseline hazards per 1000 by band and period (or cohort),
    without spatial terms; cohorts inside a cell are weighted by months."""
    if by not in ("period", "cohort"):
        raise ParameterError(f"age-specific curves run by period or cohort, not {by!r}")
    grid = period_grid(periods, schema)
    hazards = expit(draws.linear_predictor(model.design_for(grid, spatial=False, interaction=False)))
    keys = grid[["age_band", by]].drop_duplicates().sort_values(["age_band", by]).to_numpy()
    rows = []
    q = sorted(quantiles)
    for band, key in keys:
        members = np.flatnonzero((grid["age_band"] == band).to_numpy() & (grid[by] == key).to_numpy())
        weights = grid["months"].to_numpy()[members].astype(float)
        curve = hazards[:, members] @ (weights / weights.sum())
        values = 1000.0 * np.quantile(curve, q)
        rows.append({"age_band": int(band), by: int(key), "median": values[len(q) // 2],
                     "lower": values[0], "upper": values[-1]})
    return pd.DataFrame(rows)
