"""RW2 structures, the identifiable APC layout and month-level period grids."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .data import DEFAULT_SCHEMA, EPOCH_YEAR, MAX_AGE_MONTHS, AgeBandSchema
from .errors import ModelAssemblyError, ParameterError, StructureError
from .structure import StructuredPrecision, scale_to_unit_variance

logger = logging.getLogger(__name__)

AXIS_KINDS = ("age", "period", "cohort")
VARIANTS = ("AP", "AC", "APC")
DEFAULT_SLOPES = {"APC": ("age", "period"), "AP": ("age", "period"), "AC": ("age", "cohort")}
CURVATURES = {"APC": ("age", "period", "cohort"), "AP": ("age", "period"), "AC": ("age", "cohort")}
GRID_COLUMNS = ["age_band", "period", "cohort", "months"]


@dataclass(frozen=True)
class TemporalAxis:
    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise StructureError(f"unknown axis kind {self.kind!r}")
        values = tuple(float(v) for v in self.values)
        if len(values) == 0:
            raise StructureError(f"{self.kind} axis is empty")
        if np.any(np.diff(values) <= 0):
            raise StructureError(f"{self.kind} axis values must be strictly increasing without duplicates")
        object.__setattr__(self, "values", values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def size(self) -> int:
        return len(self.values)

    def centered(self) -> np.ndarray:
        return self.array - self.array.mean()

    def positions(self, values) -> np.ndarray:
        """Index of each value on the axis; values off the axis raise."""
        values = np.asarray(values, dtype=float)
        index = np.searchsorted(self.array, values)
        index = np.clip(index, 0, self.size - 1)
        if not np.allclose(self.array[index], values):
            missing = sorted(set(values[~np.isclose(self.array[index], values)].tolist()))
            raise ModelAssemblyError(f"{self.kind} values {missing[:5]} are not on the axis")
        return index

    @classmethod
    def years(cls, kind: str, first: int, last: int) -> "TemporalAxis":
        return cls(kind, tuple(range(int(first), int(last) + 1)))


def second_difference_operator(values: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Divided second differences and their weights for arbitrary spacing.

    Row ``i`` approximates the curvature at ``values[i+1]``; with equal unit
    spacing this is the classical ``(1, -2, 1)`` stencil with unit weights.
    """
    h = np.diff(values)
    n = values.size
    rows = np.repeat(np.arange(n - 2), 3)
    cols = (np.arange(n - 2)[:, None] + np.arange(3)).ravel()
    data = np.column_stack([1.0 / h[:-1], -(1.0 / h[:-1] + 1.0 / h[1:]), 1.0 / h[1:]]).ravel()
    weights = 2.0 / (h[:-1] + h[1:])
    return sp.csr_matrix((data, (rows, cols)), shape=(n - 2, n)), weights


def curvature_constraints(axis: TemporalAxis) -> np.ndarray:
    """Sum-to-zero and orthogonal-to-linear rows."""
    return np.vstack([np.ones(axis.size), axis.centered()])


def rw2_precision(axis: TemporalAxis, scale: bool = False) -> StructuredPrecision:
    if axis.size < 3:
        raise StructureError(f"RW2 on the {axis.kind} axis needs at least 3 values, got {axis.size}")
    values = axis.array
    if not np.allclose(np.diff(values), np.diff(values)[0]):
        d, w = second_difference_operator(values)
    else:
        d, _ = second_difference_operator(np.arange(axis.size, dtype=float))
        w = np.ones(axis.size - 2)
    q = StructuredPrecision(
        matrix=sp.csr_matrix(d.T @ sp.diags(w) @ d),
        rank_deficiency=2,
        constraints=curvature_constraints(axis),
        rhs=np.zeros(2),
    )
    return scale_to_unit_variance(q) if scale else q


def slope_covariate(axis: TemporalAxis, values) -> np.ndarray:
    """Centered by the axis mean and scaled to unit axis range."""
    span = axis.array[-1] - axis.array[0]
    return (np.asarray(values, dtype=float) - axis.array.mean()) / (span if span > 0 else 1.0)


@dataclass(frozen=True)
class CellIndex:
    """Per-cell slope covariates and curvature positions."""

    t1: np.ndarray
    t2: np.ndarray
    age: np.ndarray
    period: np.ndarray
    cohort: np.ndarray

    def __len__(self) -> int:
        return self.age.size


@dataclass(frozen=True)
class ApcLayout:
    variant: str
    slopes: tuple[str, str]
    age_axis: TemporalAxis
    period_axis: TemporalAxis
    cohort_axis: TemporalAxis
    cells: Optional[CellIndex]

    @property
    def curvatures(self) -> tuple[str, ...]:
        return CURVATURES[self.variant]

    def axis(self, kind: str) -> TemporalAxis:
        return {"age": self.age_axis, "period": self.period_axis, "cohort": self.cohort_axis}[kind]

    def index_cells(self, frame: pd.DataFrame) -> CellIndex:
        """Slopes and curvature positions for cells with columns age_band, period, cohort."""
        bands = frame["age_band"].to_numpy(dtype=int)
        if bands.size and (bands.min() < 0 or bands.max() >= self.age_axis.size):
            raise ModelAssemblyError("age band outside the age axis")
        ages = self.age_axis.array[bands] if bands.size else np.zeros(0)
        periods = frame["period"].to_numpy(dtype=float)
        cohorts = frame["cohort"].to_numpy(dtype=float)
        second = {"period": periods, "cohort": cohorts}[self.slopes[1]]
        return CellIndex(
            t1=slope_covariate(self.age_axis, ages),
            t2=slope_covariate(self.axis(self.slopes[1]), second),
            age=bands,
            period=self.period_axis.positions(periods),
            cohort=self.cohort_axis.positions(cohorts),
        )


def build_apc_layout(
    cells: pd.DataFrame,
    variant: str,
    *,
    age_values: Optional[Sequence[float]] = None,
    extra: Optional[pd.DataFrame] = None,
    slopes: Optional[tuple[str, str]] = None,
) -> ApcLayout:
    """Layout of the identifiable APC reparameterisation over data cells.

    Period and cohort axes are contiguous calendar years covering the data and
    any ``extra`` (prediction) cells.  The second slope defaults to period
    for APC and AP and to cohort for AC.
    """
    if variant not in VARIANTS:
        raise ModelAssemblyError(f"unknown variant {variant!r}, expected one of {', '.join(VARIANTS)}")
    if cells is None or len(cells) == 0:
        raise ModelAssemblyError("cannot build a layout without cells")
    slopes = tuple(slopes) if slopes is not None else DEFAULT_SLOPES[variant]
    if slopes[0] != "age" or slopes[1] not in ("period", "cohort"):
        raise ModelAssemblyError(f"unsupported slope pair {slopes}")
    age_values = DEFAULT_SCHEMA.midpoints if age_values is None else tuple(age_values)
    covered = cells if extra is None or len(extra) == 0 else pd.concat([cells, extra], ignore_index=True)
    layout = ApcLayout(
        variant=variant,
        slopes=slopes,
        age_axis=TemporalAxis("age", tuple(age_values)),
        period_axis=TemporalAxis.years("period", covered["period"].min(), covered["period"].max()),
        cohort_axis=TemporalAxis.years("cohort", covered["cohort"].min(), covered["cohort"].max()),
        cells=None,
    )
    index = layout.index_cells(cells)
    logger.debug(
        "%s layout: %d cells, periods %d-%d, cohorts %d-%d",
        variant, len(index), layout.period_axis.values[0], layout.period_axis.values[-1],
        layout.cohort_axis.values[0], layout.cohort_axis.values[-1],
    )
    return replace(layout, cells=index)


def period_grid(periods: Iterable[int], schema: AgeBandSchema = DEFAULT_SCHEMA) -> pd.DataFrame:
    """Every (band, period, cohort) cell reached by monthly ages 0-59 in the
    given calendar years, with the number of months mapping to it."""
    periods = np.asarray(sorted(set(int(p) for p in periods)), dtype=int)
    if periods.size == 0:
        return pd.DataFrame(columns=GRID_COLUMNS).astype(int)
    months = ((periods[:, None] - EPOCH_YEAR) * 12 + np.arange(12)).ravel()
    ages = np.arange(MAX_AGE_MONTHS)
    month, age = np.meshgrid(months, ages, indexing="ij")
    frame = pd.DataFrame(
        {
            "age_band": schema.band_of(age.ravel()),
            "period": EPOCH_YEAR + month.ravel() // 12,
            "cohort": EPOCH_YEAR + (month - age).ravel() // 12,
        }
    )
    grid = frame.groupby(["age_band", "period", "cohort"], sort=True).size().rename("months").reset_index()
    return grid.astype(int)[GRID_COLUMNS]


def prediction_grid(last_period: int, horizon: int, schema: AgeBandSchema = DEFAULT_SCHEMA) -> pd.DataFrame:
    if horizon < 0:
        raise ParameterError(f"horizon must be non-negative, got {horizon}")
    return period_grid(range(int(last_period) + 1, int(last_period) + 1 + int(horizon)), schema)


def dominant_cohorts(grid: pd.DataFrame) -> pd.DataFrame:
    """One cohort per (band, period): the one with most months, the later
    cohort on ties."""
    ordered = grid.sort_values(["age_band", "period", "months", "cohort"], ascending=[True, True, False, False])
    return ordered.drop_duplicates(["age_band", "period"]).sort_values(["age_band", "period"]).reset_index(drop=True)


def cohort_weights(grid: pd.DataFrame, collapse: str = "dominant") -> pd.DataFrame:
    """Grid rows with a ``weight`` column summing to one per (band, period)."""
    if collapse == "dominant":
        out = dominant_cohorts(grid).copy()
        out["weight"] = 1.0
        return out
    if collapse == "weighted":
        out = grid.copy()
        out["weight"] = out["months"] / out.groupby(["age_band", "period"])["months"].transform("sum")
        return out.reset_index(drop=True)
    raise ParameterError(f"unknown cohort collapse rule {collapse!r}")
