"""Synthetic stratified two-stage cluster surveys with a known hazard surface.

The finite population is a set of enumeration areas (EAs) per region and
urban/rural stratum.  Birth histories of a household are generated on demand
from a generator seeded by (population seed, EA, household), so the
population is fixed without ever being materialised as a whole.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .aggregate import StratumProportions, u5mr_from_hazards, write_proportions
from .config import dataclass_from_dict, read_json
from .data import (
    DEFAULT_SCHEMA, MAX_AGE_MONTHS, AgeBandSchema, BirthRecord, expand_survey, month_index, parse_month,
    write_survey_csv, year_of,
)
from .errors import ConfigError, DesignError, ParameterError
from .interaction import kronecker_precision
from .spatial import AdjacencyGraph, Bym2Block, delaunay_graph, icar_precision, scale_icar, write_adjacency
from .structure import StructuredPrecision, sample_intrinsic
from .temporal import TemporalAxis, cohort_weights, period_grid, rw2_precision

logger = logging.getLogger(__name__)

JITTER_KM = {"urban": 2.0, "rural": 5.0, "rural_far": 10.0}
FAR_JITTER_SHARE = 0.01
TRUTH_COLUMNS = ["level", "region", "period", "stratum", "u5mr"]


@dataclass(frozen=True)
class SynthConfig:
    n_regions: int = 47
    n_all_urban_regions: int = 2
    eas_per_region: int = 100
    urban_share: tuple[float, float] = (0.2, 0.45)
    mean_households: float = 120.0
    women_per_household: float = 1.0
    births_per_woman_year: float = 0.16
    first_period: int = 2006
    last_period: int = 2013
    interview_start: str = "2014-01"
    interview_end: str = "2014-06"
    band_logit: tuple[float, ...] = (-3.7, -6.4, -7.0, -7.4, -7.7, -7.9)
    urban_effect: float = -0.3
    period_slope: float = -0.04
    cohort_slope: float = 0.0
    random_effects: bool = True
    tau_period: float = 50.0
    tau_cohort: float = 100.0
    tau_space: float = 4.0
    phi: float = 0.7
    tau_interaction: float = 100.0
    extent_km: float = 800.0
    ea_spread_km: float = 25.0

    def __post_init__(self):
        if self.n_regions < 3:
            raise ConfigError("at least three regions are needed")
        if not 0 <= self.n_all_urban_regions <= self.n_regions:
            raise ConfigError("n_all_urban_regions must lie between 0 and n_regions")
        if self.eas_per_region < 2:
            raise ConfigError("every region needs at least two EAs")
        low, high = self.urban_share
        if not 0.0 < low <= high < 1.0:
            raise ConfigError("urban_share must be an interval inside (0, 1)")
        if self.mean_households < 1 or self.women_per_household < 0 or self.births_per_woman_year < 0:
            raise ConfigError("household sizes and fertility must be positive")
        if self.last_period - self.first_period < 2:
            raise ConfigError("at least three periods are needed")
        if parse_month(self.interview_end) < parse_month(self.interview_start):
            raise ConfigError("interview window ends before it starts")
        if parse_month(self.interview_start) < month_index(self.last_period + 1, 1):
            raise ConfigError("interviews must start after the last period")
        if len(self.band_logit) != 6:
            raise ConfigError("band_logit must list six values")
        if min(self.tau_period, self.tau_cohort, self.tau_space, self.tau_interaction) <= 0:
            raise ConfigError("truth precisions must be positive")
        if not 0.0 <= self.phi < 1.0:
            raise ConfigError("phi must lie in [0, 1)")
        object.__setattr__(self, "urban_share", tuple(float(v) for v in self.urban_share))
        object.__setattr__(self, "band_logit", tuple(float(v) for v in self.band_logit))

    @property
    def birth_start(self) -> int:
        return month_index(self.first_period - 5, 1)

    @property
    def periods(self) -> list[int]:
        return list(range(self.first_period, self.last_period + 1))


def load_synth_config(path) -> SynthConfig:
    return dataclass_from_dict(SynthConfig, read_json(path), "synthetic population")


@dataclass(frozen=True)
class SurveyDesign:
    """``None`` takes every EA of a stratum, or every household of an EA."""

    clusters_per_stratum: Optional[int] = 17
    households_per_cluster: Optional[int] = 25
    jitter: bool = True

    def __post_init__(self):
        for name in ("clusters_per_stratum", "households_per_cluster"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise DesignError(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# truth

@dataclass
class TruthParameters:
    """Logit monthly hazard as an APC surface with spatial and space-period terms."""

    band_logit: np.ndarray
    urban_effect: float
    period_slope: float
    cohort_slope: float
    axis: TemporalAxis
    period_effect: np.ndarray
    cohort_effect: np.ndarray
    space: np.ndarray
    interaction: np.ndarray

    def logit_hazard(self, band, period, cohort, region, urban) -> np.ndarray:
        """Vectorised over arrays of band, period, cohort, region index and urban flag."""
        centre = self.axis.array.mean()
        p = np.clip(np.asarray(period) - int(self.axis.values[0]), 0, self.axis.size - 1)
        c = np.clip(np.asarray(cohort) - int(self.axis.values[0]), 0, self.axis.size - 1)
        region = np.asarray(region)
        return (
            self.band_logit[np.asarray(band)]
            + self.urban_effect * np.asarray(urban, dtype=float)
            + self.period_slope * (np.asarray(period) - centre)
            + self.cohort_slope * (np.asarray(cohort) - centre)
            + self.period_effect[p]
            + self.cohort_effect[c]
            + self.space[region]
            + self.interaction[p, region]
        )


def _draw_truth(config: SynthConfig, graph: AdjacencyGraph, rng: np.random.Generator) -> TruthParameters:
    first = config.first_period - 5
    last = int(year_of(parse_month(config.interview_end))) + 5
    axis = TemporalAxis.years("period", first, last)
    n, s = axis.size, graph.size
    if not config.random_effects:
        zeros = np.zeros(n)
        return TruthParameters(np.asarray(config.band_logit), config.urban_effect, config.period_slope,
                               config.cohort_slope, axis, zeros, zeros.copy(), np.zeros(s), np.zeros((n, s)))
    q_time = rw2_precision(axis, scale=True)
    scaled = scale_icar(icar_precision(graph), graph)
    period_effect = sample_intrinsic(q_time, 1, rng, config.tau_period)[0]
    cohort_effect = sample_intrinsic(q_time, 1, rng, config.tau_cohort)[0]
    space = Bym2Block(config.tau_space, config.phi, scaled).sample(1, rng)[0]
    block = kronecker_precision(q_time, scaled, max_size=n * s, derive_constraints=False)
    kron = StructuredPrecision(block.precision, block.nullity, np.zeros((0, n * s)), np.zeros(0))
    interaction = sample_intrinsic(kron, 1, rng, config.tau_interaction)[0].reshape(n, s)
    return TruthParameters(np.asarray(config.band_logit), config.urban_effect, config.period_slope,
                           config.cohort_slope, axis, period_effect, cohort_effect, space, interaction)


# ---------------------------------------------------------------------------
# population

@dataclass
class SyntheticPopulation:
    config: SynthConfig
    seed: int
    graph: AdjacencyGraph
    regions: pd.DataFrame
    eas: pd.DataFrame
    truth: TruthParameters
    schema: AgeBandSchema = DEFAULT_SCHEMA

    @property
    def n_strata(self) -> int:
        return int(self.eas[["region_id", "urban"]].drop_duplicates().shape[0])

    def household_births(self, ea: int, household: int) -> pd.DataFrame:
        """Children of one household: birth month and death month (missing
        when the child survives its first 60 months)."""
        row = self.eas.iloc[ea]
        config = self.config
        rng = np.random.default_rng([self.seed, ea, household])
        end = parse_month(config.interview_end)
        years = (end - config.birth_start + 1) / 12.0
        women = rng.poisson(config.women_per_household)
        n = int(rng.poisson(config.births_per_woman_year * years, size=women).sum()) if women else 0
        births = np.sort(rng.integers(config.birth_start, end + 1, size=n))
        ages = np.arange(MAX_AGE_MONTHS)
        months = births[:, None] + ages[None, :]
        hazard = expit(self.truth.logit_hazard(
            self.schema.band_of(ages)[None, :], year_of(months), year_of(births)[:, None],
            int(row["region_index"]), int(row["urban"]),
        ))
        died = rng.random((n, MAX_AGE_MONTHS)) < hazard
        death = pd.Series(births + np.argmax(died, axis=1), dtype="Int64").where(died.any(axis=1))
        return pd.DataFrame({"birth_month": births, "death_month": death})


def generate_population(config: SynthConfig, seed: int = 0) -> SyntheticPopulation:
    """Regions on a Delaunay graph of random centroids, EAs per stratum with
    random sizes, and a truth drawn once from the model priors."""
    layout_seq, truth_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(layout_seq)
    region_ids = [f"R{i + 1:02d}" for i in range(config.n_regions)]
    centroids = rng.uniform(0.0, config.extent_km, size=(config.n_regions, 2))
    graph = delaunay_graph(centroids, region_ids)
    low, high = config.urban_share
    share = rng.uniform(low, high, size=config.n_regions)
    share[: config.n_all_urban_regions] = 1.0
    regions = pd.DataFrame({"region_id": region_ids, "x": centroids[:, 0], "y": centroids[:, 1], "urban_share": share})

    rows = []
    for i, region in enumerate(region_ids):
        n_urban = config.eas_per_region if share[i] >= 1.0 else max(1, int(round(share[i] * config.eas_per_region)))
        n_urban = min(n_urban, config.eas_per_region - (0 if share[i] >= 1.0 else 1))
        flags = np.r_[np.ones(n_urban, dtype=int), np.zeros(config.eas_per_region - n_urban, dtype=int)]
        sizes = 1 + rng.poisson(config.mean_households - 1, size=flags.size)
        xy = centroids[i] + rng.normal(0.0, config.ea_spread_km, size=(flags.size, 2))
        for flag, size, (x, y) in zip(flags, sizes, xy):
            rows.append({"region_id": region, "region_index": i, "urban": int(flag),
                         "households": int(size), "x": x, "y": y})
    eas = pd.DataFrame(rows)
    eas.insert(0, "ea", np.arange(len(eas)))
    truth = _draw_truth(config, graph, np.random.default_rng(truth_seq))
    population = SyntheticPopulation(config, int(seed), graph, regions, eas, truth)
    logger.info(
        "synthetic population: %d regions, %d strata, %d EAs, %d households",
        config.n_regions, population.n_strata, len(eas), int(eas["households"].sum()),
    )
    return population


# ---------------------------------------------------------------------------
# survey

@dataclass
class SurveySample:
    records: list[BirthRecord]
    clusters: pd.DataFrame


def systematic_pps(sizes: np.ndarray, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Systematic PPS selection of ``n`` units from a randomly ordered list.

    Units whose probability would reach one are taken with certainty and the
    rest are sampled with the remaining size.  Returns the selected indices
    and the inclusion probabilities of all units.
    """
    sizes = np.asarray(sizes, dtype=float)
    if n > sizes.size:
        raise DesignError(f"cannot select {n} clusters from {sizes.size} EAs")
    certain = np.zeros(sizes.size, dtype=bool)
    while True:
        remaining = n - int(certain.sum())
        total = sizes[~certain].sum()
        pi = np.where(certain, 1.0, remaining * sizes / total if total > 0 else 0.0)
        new = ~certain & (pi >= 1.0)
        if not new.any():
            break
        certain |= new
    remaining = n - int(certain.sum())
    picks = np.zeros(0, dtype=int)
    if remaining > 0:
        order = rng.permutation(np.flatnonzero(~certain))
        cumulative = np.cumsum(sizes[order])
        step = cumulative[-1] / remaining
        points = rng.uniform(0.0, step) + step * np.arange(remaining)
        picks = order[np.searchsorted(cumulative, points, side="right")]
    return np.sort(np.r_[np.flatnonzero(certain), picks]), pi


def _jitter(urban: bool, rng: np.random.Generator) -> tuple[float, float, float]:
    if urban:
        cap = JITTER_KM["urban"]
    else:
        cap = JITTER_KM["rural_far"] if rng.random() < FAR_JITTER_SHARE else JITTER_KM["rural"]
    distance = rng.uniform(0.0, cap)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return distance * math.cos(angle), distance * math.sin(angle), distance


def draw_survey(population: SyntheticPopulation, design: SurveyDesign = SurveyDesign(), seed: int = 0) -> SurveySample:
    """Stage one selects EAs by systematic PPS within each stratum, stage two
    an equal-probability sample of households; the weight of every child is
    the inverse overall inclusion probability of its household."""
    rng = np.random.default_rng(seed)
    config = population.config
    start, end = parse_month(config.interview_start), parse_month(config.interview_end)
    records: list[BirthRecord] = []
    clusters = []
    for (region, urban), stratum in population.eas.groupby(["region_id", "urban"], sort=True):
        n = len(stratum) if design.clusters_per_stratum is None else design.clusters_per_stratum
        if n > len(stratum):
            raise DesignError(
                f"stratum {region}/{'urban' if urban else 'rural'} has {len(stratum)} EAs, {n} requested"
            )
        chosen, pi = systematic_pps(stratum["households"].to_numpy(), n, rng)
        for local in chosen:
            ea = stratum.iloc[local]
            total = int(ea["households"])
            m = total if design.households_per_cluster is None else min(design.households_per_cluster, total)
            households = np.sort(rng.choice(total, size=m, replace=False))
            weight = 1.0 / (pi[local] * m / total)
            interview = int(rng.integers(start, end + 1))
            dx, dy, distance = _jitter(bool(urban), rng) if design.jitter else (0.0, 0.0, 0.0)
            cluster_id = f"{region}-{'U' if urban else 'R'}{int(ea['ea']):05d}"
            births = 0
            for hh in households:
                children = population.household_births(int(ea["ea"]), int(hh))
                for k, child in enumerate(children.itertuples(index=False)):
                    if child.birth_month > interview:
                        continue
                    death = None if pd.isna(child.death_month) else int(child.death_month)
                    if death is not None and death > interview:
                        death = None
                    records.append(BirthRecord(
                        child_id=f"{cluster_id}-{int(hh)}-{k}", birth_month=int(child.birth_month),
                        death_month=death, interview_month=interview, cluster_id=cluster_id,
                        mother_weight=weight, region_id=region, is_urban=bool(urban),
                    ))
                    births += 1
            clusters.append({
                "cluster_id": cluster_id, "region_id": region, "urban": int(urban), "ea": int(ea["ea"]),
                "households_total": total, "households_sampled": m, "pi_ea": pi[local], "weight": weight,
                "interview_month": interview, "births": births, "x": ea["x"], "y": ea["y"],
                "x_displaced": ea["x"] + dx, "y_displaced": ea["y"] + dy, "displacement_km": distance,
            })
    logger.info("synthetic survey: %d clusters, %d children", len(clusters), len(records))
    return SurveySample(records, pd.DataFrame(clusters))


# ---------------------------------------------------------------------------
# aggregation inputs and truth

def population_proportions(population: SyntheticPopulation, periods: Optional[Sequence[int]] = None) -> StratumProportions:
    """Rural share of households per region and region share of national households."""
    periods = population.config.periods if periods is None else list(periods)
    totals = population.eas.pivot_table(index="region_id", columns="urban", values="households",
                                        aggfunc="sum", fill_value=0)
    rural = totals.get(0, pd.Series(0, index=totals.index))
    region_total = totals.sum(axis=1)
    base = pd.DataFrame({
        "region_id": totals.index.astype(str),
        "q_rural": (rural / region_total).to_numpy(),
        "w_national": (region_total / region_total.sum()).to_numpy(),
    })
    table = pd.concat([base.assign(period=int(p)) for p in periods], ignore_index=True)
    return StratumProportions(table)


def true_u5mr(
    population: SyntheticPopulation,
    periods: Optional[Sequence[int]] = None,
    collapse: str = "weighted",
) -> pd.DataFrame:
    """Stratum, region and national U5MR from the true hazards."""
    periods = sorted(population.config.periods if periods is None else [int(p) for p in periods])
    if not periods:
        raise ParameterError("no periods to evaluate")
    schema = population.schema
    grid = cohort_weights(period_grid(periods, schema), collapse)
    proportions = population_proportions(population, periods)
    regions = population.graph.regions
    band = grid["age_band"].to_numpy()
    slot = grid["period"].map({p: j for j, p in enumerate(periods)}).to_numpy()
    strata = np.zeros((len(regions), 2, len(periods)))
    for i in range(len(regions)):
        for urban in (0, 1):
            h = expit(population.truth.logit_hazard(band, grid["period"].to_numpy(), grid["cohort"].to_numpy(), i, urban))
            by_band = np.zeros((len(periods), schema.n_bands))
            np.add.at(by_band, (slot, band), h * grid["weight"].to_numpy())
            strata[i, urban] = u5mr_from_hazards(by_band, schema)
    rows = []
    for j, period in enumerate(periods):
        q = proportions.q(period, regions)
        regional = strata[:, 0, j] * q + strata[:, 1, j] * (1.0 - q)
        rows.append({"level": "national", "region": "", "period": period, "stratum": "",
                     "u5mr": float(regional @ proportions.w(period, regions))})
        for i, region in enumerate(regions):
            rows.append({"level": "region", "region": region, "period": period, "stratum": "",
                         "u5mr": float(regional[i])})
            for urban, name in ((0, "rural"), (1, "urban")):
                rows.append({"level": "stratum", "region": region, "period": period, "stratum": name,
                             "u5mr": float(strata[i, urban, j])})
    return pd.DataFrame(rows, columns=TRUTH_COLUMNS)


def _ratio_u5mr(person_months: pd.DataFrame, keys: list[str], schema: AgeBandSchema) -> pd.DataFrame:
    sums = person_months.groupby(keys + ["period", "age_band"])[["died", "months"]].sum()
    bands = list(range(schema.n_bands))
    deaths = sums["died"].unstack("age_band").reindex(columns=bands, fill_value=0).fillna(0)
    months = sums["months"].unstack("age_band").reindex(columns=bands, fill_value=0).fillna(0)
    exposed = (months > 0).all(axis=1).to_numpy()
    hazards = deaths.to_numpy(dtype=float)[exposed] / months.to_numpy(dtype=float)[exposed]
    return pd.DataFrame({"u5mr": u5mr_from_hazards(hazards, schema)}, index=deaths.index[exposed]).reset_index()


def realised_u5mr(
    population: SyntheticPopulation,
    seed: int = 0,
    periods: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """Finite-population U5MR of the children actually born in the population.

    Every household is interviewed (``draw_survey`` with a census design and
    the same ``seed``) and the hazards are unweighted death-to-exposure ratios.
    Region-periods with an age band left unexposed are omitted.
    """
    periods = sorted(population.config.periods if periods is None else [int(p) for p in periods])
    if not periods:
        raise ParameterError("no periods to evaluate")
    census = draw_survey(population, SurveyDesign(None, None), seed)
    person_months = expand_survey(census.records, population.schema)
    person_months = person_months[person_months["period"].isin(periods) & (person_months["months"] > 0)]
    schema = population.schema
    national = _ratio_u5mr(person_months.assign(level="national"), ["level"], schema).assign(region="", stratum="")
    regional = _ratio_u5mr(person_months, ["region_id"], schema).assign(level="region", stratum="")
    strata = _ratio_u5mr(person_months, ["region_id", "urban"], schema).assign(level="stratum")
    strata["stratum"] = np.where(strata.pop("urban").astype(bool), "urban", "rural")
    table = pd.concat([
        national,
        regional.rename(columns={"region_id": "region"}),
        strata.rename(columns={"region_id": "region"}),
    ], ignore_index=True)
    table["period"] = table["period"].astype(int)
    return table[TRUTH_COLUMNS].sort_values(["period", "level", "region", "stratum"]).reset_index(drop=True)


def write_simulation(
    population: SyntheticPopulation,
    survey: SurveySample,
    out_dir,
    output: Optional[Callable[[str], Path]] = None,
) -> list[Path]:
    out_dir = Path(out_dir)
    output = output or (lambda name: out_dir / name)
    writers = [
        ("survey.csv", lambda path: write_survey_csv(survey.records, path)),
        ("clusters.csv", lambda path: survey.clusters.to_csv(path, index=False, float_format="%.10g")),
        ("truth.csv", lambda path: true_u5mr(population).to_csv(path, index=False, float_format="%.10g")),
        ("proportions.csv", lambda path: write_proportions(population_proportions(population), path)),
        ("adjacency.txt", lambda path: write_adjacency(population.graph, path)),
    ]
    written = []
    for name, write in writers:
        path = output(name)
        written.append(path)
        write(path)
    return written
