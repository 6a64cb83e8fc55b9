"""Birth-history ingestion, person-month expansion and count-cell aggregation.

Calendar months are integers counted from January of ``EPOCH_YEAR``; years are
derived from them and never parsed back out of strings downstream.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import RecordError

logger = logging.getLogger(__name__)

EPOCH_YEAR = 1900
MAX_AGE_MONTHS = 60

SURVEY_COLUMNS = [
    "child_id",
    "birth_month",
    "death_month",
    "interview_month",
    "cluster_id",
    "region_id",
    "urban",
    "weight",
]
EXPOSURE_COLUMNS = ["age_band", "period", "cohort", "months", "died"]
PERSON_MONTH_COLUMNS = ["child_id", "cluster_id", "region_id", "urban", "weight"] + EXPOSURE_COLUMNS
CELL_KEY = ["age_band", "period", "cohort", "cluster_id"]
CELL_COLUMNS = CELL_KEY + ["region_id", "urban", "deaths", "exposure"]

_MONTH_PATTERN = re.compile(r"^\s*(\d{4})-(\d{1,2})\s*$")


def month_index(year: int, month: int) -> int:
    """Months since January of the epoch year; ``month`` is 1-based."""
    return (int(year) - EPOCH_YEAR) * 12 + (int(month) - 1)


def year_of(month) -> np.ndarray | int:
    return EPOCH_YEAR + np.floor_divide(month, 12)


def parse_month(text: str) -> int:
    match = _MONTH_PATTERN.match(text)
    if match is None:
        raise ValueError(f"malformed month {text!r}, expected YYYY-MM")
    year, month = int(match.group(1)), int(match.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return month_index(year, month)


def format_month(index: int) -> str:
    year, month = divmod(int(index), 12)
    return f"{EPOCH_YEAR + year:04d}-{month + 1:02d}"


@dataclass(frozen=True)
class AgeBandSchema:
    """Grouping of the first 60 months of life into discrete hazard bands."""

    boundaries: tuple[tuple[int, int], ...] = ((0, 1), (1, 12), (12, 24), (24, 36), (36, 48), (48, 60))
    midpoints: tuple[float, ...] = (0.0, 6.0, 17.5, 29.5, 41.5, 52.5)

    def __post_init__(self):
        if len(self.boundaries) != 6 or len(self.midpoints) != 6:
            raise ValueError("exactly six age bands are required")
        if self.boundaries[0][0] != 0 or self.boundaries[-1][1] != MAX_AGE_MONTHS:
            raise ValueError("bands must cover months 0..59")
        for (lo, hi), (nlo, _) in zip(self.boundaries, self.boundaries[1:] + ((MAX_AGE_MONTHS, 0),)):
            if hi <= lo or hi != nlo:
                raise ValueError("bands must be contiguous, non-empty intervals")
        if np.any(np.diff(self.midpoints) <= 0):
            raise ValueError("band midpoints must be strictly increasing")

    @property
    def widths(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.boundaries], dtype=float)

    @property
    def lower_edges(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.boundaries])

    @property
    def n_bands(self) -> int:
        return len(self.boundaries)

    def band_of(self, age_months) -> np.ndarray:
        """Band index of each age in months (ages must be in [0, 60))."""
        return np.searchsorted(self.lower_edges, np.asarray(age_months), side="right") - 1


DEFAULT_SCHEMA = AgeBandSchema()


@dataclass(frozen=True)
class BirthRecord:
    child_id: str
    birth_month: int
    death_month: Optional[int]
    interview_month: int
    cluster_id: str
    mother_weight: float
    region_id: str
    is_urban: bool

    def validate(self) -> None:
        if not self.birth_month <= self.interview_month:
            raise RecordError(f"child {self.child_id}: born after the interview")
        if self.death_month is not None:
            if self.death_month < self.birth_month:
                raise RecordError(f"child {self.child_id}: death before birth")
            if self.death_month > self.interview_month:
                raise RecordError(f"child {self.child_id}: death after the interview")
        if not (np.isfinite(self.mother_weight) and self.mother_weight > 0):
            raise RecordError(f"child {self.child_id}: design weight must be positive")


class ExposureRow(NamedTuple):
    age_band: int
    period: int
    cohort: int
    months: int
    died: int


def exposure_months(birth_month: int, death_month: Optional[int], interview_month: int) -> int:
    """Months at risk under five.

    Survivors are censored at the month before the interview; a death is an
    observed event and its month is always included.
    """
    if death_month is not None:
        return min(death_month - birth_month + 1, MAX_AGE_MONTHS)
    return max(0, min(interview_month - birth_month, MAX_AGE_MONTHS))


def expand_birth_history(record: BirthRecord, schema: AgeBandSchema = DEFAULT_SCHEMA) -> list[ExposureRow]:
    """Attribute every life-month under five to its (band, calendar year) cell."""
    record.validate()
    n = exposure_months(record.birth_month, record.death_month, record.interview_month)
    if n == 0:
        return []
    ages = np.arange(n)
    months = record.birth_month + ages
    frame = pd.DataFrame(
        {
            "age_band": schema.band_of(ages),
            "period": year_of(months),
            "died": np.zeros(n, dtype=int),
        }
    )
    if record.death_month is not None and record.death_month - record.birth_month < MAX_AGE_MONTHS:
        frame.loc[n - 1, "died"] = 1
    cohort = int(year_of(record.birth_month))
    grouped = frame.groupby(["age_band", "period"], sort=True).agg(months=("died", "size"), died=("died", "sum"))
    return [
        ExposureRow(int(band), int(period), cohort, int(row.months), int(row.died))
        for (band, period), row in grouped.iterrows()
    ]


def records_frame(records: Iterable[BirthRecord]) -> pd.DataFrame:
    rows = [
        {
            "child_id": r.child_id,
            "birth_month": r.birth_month,
            "death_month": pd.NA if r.death_month is None else r.death_month,
            "interview_month": r.interview_month,
            "cluster_id": r.cluster_id,
            "region_id": r.region_id,
            "urban": bool(r.is_urban),
            "weight": float(r.mother_weight),
        }
        for r in records
    ]
    frame = pd.DataFrame(rows, columns=SURVEY_COLUMNS)
    frame["death_month"] = frame["death_month"].astype("Int64")
    return frame


def expand_survey(records: Sequence[BirthRecord], schema: AgeBandSchema = DEFAULT_SCHEMA) -> pd.DataFrame:
    """Vectorised person-month expansion of many records.

    One row per (child, age band, period) with months at risk and the died flag,
    carrying the cluster, region, stratum and design weight of the child.
    """
    for record in records:
        record.validate()
    frame = records_frame(records)
    if frame.empty:
        return pd.DataFrame(columns=PERSON_MONTH_COLUMNS)
    birth = frame["birth_month"].to_numpy()
    has_death = frame["death_month"].notna().to_numpy()
    death = frame["death_month"].fillna(0).to_numpy(dtype=np.int64)
    n_months = np.where(
        has_death,
        np.minimum(death - birth + 1, MAX_AGE_MONTHS),
        np.clip(frame["interview_month"].to_numpy() - birth, 0, MAX_AGE_MONTHS),
    )
    child = np.repeat(np.arange(len(frame)), n_months)
    starts = np.repeat(np.cumsum(n_months) - n_months, n_months)
    ages = np.arange(child.size) - starts
    died = (has_death[child] & (ages == death[child] - birth[child])).astype(int)
    months = pd.DataFrame(
        {
            "row": child,
            "age_band": schema.band_of(ages),
            "period": year_of(birth[child] + ages),
            "died": died,
        }
    )
    grouped = (
        months.groupby(["row", "age_band", "period"], sort=True)
        .agg(months=("died", "size"), died=("died", "sum"))
        .reset_index()
    )
    meta = frame.iloc[grouped["row"].to_numpy()].reset_index(drop=True)
    out = pd.DataFrame(
        {
            "child_id": meta["child_id"],
            "cluster_id": meta["cluster_id"],
            "region_id": meta["region_id"],
            "urban": meta["urban"].astype(bool),
            "weight": meta["weight"].astype(float),
            "age_band": grouped["age_band"].astype(int),
            "period": grouped["period"].astype(int),
            "cohort": year_of(meta["birth_month"].to_numpy()).astype(int),
            "months": grouped["months"].astype(int),
            "died": grouped["died"].astype(int),
        }
    )
    return out[PERSON_MONTH_COLUMNS]


def aggregate_cells(person_months: pd.DataFrame) -> pd.DataFrame:
    """Sum deaths and months at risk per (age band, period, cohort, cluster).

    The result is sorted by key so that it does not depend on input order;
    cells without exposure are dropped.
    """
    if person_months.empty:
        return pd.DataFrame(columns=CELL_COLUMNS)
    cells = (
        person_months.groupby(CELL_KEY + ["region_id", "urban"], sort=True)
        .agg(deaths=("died", "sum"), exposure=("months", "sum"))
        .reset_index()
    )
    cells = cells[cells["exposure"] > 0]
    if cells.duplicated(CELL_KEY).any():
        raise RecordError("a cluster is attached to more than one region or stratum")
    cells = cells.astype({"age_band": int, "period": int, "cohort": int, "deaths": int, "exposure": int, "urban": bool})
    return cells[CELL_COLUMNS].sort_values(CELL_KEY, kind="mergesort").reset_index(drop=True)


# ---------------------------------------------------------------------------
# CSV I/O

@dataclass
class SurveyLoad:
    records: list[BirthRecord] = field(default_factory=list)
    rejections: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=["row", "reason"]))


def _parse_row(row: dict, known_regions: Optional[Collection[str]]) -> BirthRecord:
    missing = [c for c in SURVEY_COLUMNS if c != "death_month" and not row.get(c, "").strip()]
    if missing:
        raise RecordError(f"missing {', '.join(missing)}")
    try:
        birth = parse_month(row["birth_month"])
        interview = parse_month(row["interview_month"])
        death = parse_month(row["death_month"]) if row.get("death_month", "").strip() else None
    except ValueError as exc:
        raise RecordError(str(exc)) from None
    region = row["region_id"].strip()
    if known_regions is not None and region not in known_regions:
        raise RecordError(f"unknown region id {region!r}")
    urban = row["urban"].strip()
    if urban not in ("0", "1"):
        raise RecordError(f"urban must be 0 or 1, got {urban!r}")
    try:
        weight = float(row["weight"])
    except ValueError:
        raise RecordError(f"malformed weight {row['weight']!r}") from None
    record = BirthRecord(
        child_id=row["child_id"].strip(),
        birth_month=birth,
        death_month=death,
        interview_month=interview,
        cluster_id=row["cluster_id"].strip(),
        mother_weight=weight,
        region_id=region,
        is_urban=urban == "1",
    )
    record.validate()
    return record


def load_survey_csv(path, known_regions: Optional[Collection[str]] = None) -> SurveyLoad:
    """Parse a survey CSV; rows that fail validation go to the rejection table.

    Rejection row numbers count data rows from 1 (the header is not counted).
    """
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    absent = [c for c in SURVEY_COLUMNS if c not in table.columns]
    if absent:
        raise RecordError(f"{path}: missing columns {', '.join(absent)}")
    load = SurveyLoad()
    rejected = []
    for number, row in enumerate(table.to_dict("records"), start=1):
        try:
            load.records.append(_parse_row(row, known_regions))
        except RecordError as exc:
            rejected.append({"row": number, "reason": str(exc)})
    load.rejections = pd.DataFrame(rejected, columns=["row", "reason"])
    logger.info("loaded %d records from %s (%d rejected)", len(load.records), path, len(rejected))
    return load


def write_survey_csv(records: Iterable[BirthRecord], path) -> None:
    frame = records_frame(records)
    frame["birth_month"] = frame["birth_month"].map(format_month)
    frame["interview_month"] = frame["interview_month"].map(format_month)
    frame["death_month"] = frame["death_month"].map(lambda m: "" if pd.isna(m) else format_month(m))
    frame["urban"] = frame["urban"].astype(int)
    frame.to_csv(path, index=False, float_format="%.10g")


def write_rejections(rejections: pd.DataFrame, path) -> None:
    rejections.to_csv(Path(path), index=False)
