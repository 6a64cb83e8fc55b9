import numpy as np
import pandas as pd
import pytest

from conftest import record
from u5mr_apc.data import aggregate_cells, expand_survey
from u5mr_apc.errors import ModelAssemblyError, ParameterError, StructureError
from u5mr_apc.structure import check_rank, generalized_variances, geometric_mean, null_space
from u5mr_apc.temporal import (
    TemporalAxis,
    build_apc_layout,
    cohort_weights,
    dominant_cohorts,
    period_grid,
    prediction_grid,
    rw2_precision,
    slope_covariate,
)


def test_rw2_unit_spacing():
    q = rw2_precision(TemporalAxis.years("period", 2010, 2013))
    assert q.dense().tolist() == [[1, -2, 1, 0], [-2, 5, -4, 1], [1, -4, 5, -2], [0, 1, -2, 1]]
    check_rank(q)
    assert q.rank_deficiency == 2


def test_rw2_null_space_on_age_midpoints():
    axis = TemporalAxis("age", (0.0, 6.0, 17.5, 29.5, 41.5, 52.5))
    q = rw2_precision(axis)
    check_rank(q)
    assert np.allclose(q.matrix @ np.ones(6), 0.0)
    assert np.allclose(q.matrix @ axis.array, 0.0)
    basis = null_space(q.matrix)
    assert basis.shape[0] == 2


def test_scaled_rw2_has_unit_geometric_variance():
    q = rw2_precision(TemporalAxis.years("cohort", 2001, 2013), scale=True)
    assert geometric_mean(generalized_variances(q.matrix)) == pytest.approx(1.0, rel=1e-8)


def test_rw2_needs_three_values():
    with pytest.raises(StructureError):
        rw2_precision(TemporalAxis.years("period", 2012, 2013))


@pytest.mark.parametrize("values", [(), (1.0, 1.0, 2.0), (3.0, 2.0, 1.0)])
def test_bad_axes(values):
    with pytest.raises(StructureError):
        TemporalAxis("period", values)


def test_positions_off_axis():
    axis = TemporalAxis.years("period", 2006, 2013)
    assert axis.positions([2006, 2013]).tolist() == [0, 7]
    with pytest.raises(ModelAssemblyError):
        axis.positions([2014])


def test_slope_covariate_is_centered():
    axis = TemporalAxis.years("period", 2006, 2013)
    values = slope_covariate(axis, axis.array)
    assert values.mean() == pytest.approx(0.0)
    assert values.max() - values.min() == pytest.approx(1.0)


def test_period_grid_covers_cohorts():
    grid = period_grid(range(2006, 2014))
    assert grid["cohort"].min() == 2001
    assert grid["cohort"].max() == 2013
    assert (grid.groupby("period")["months"].sum() == 720).all()
    assert (grid["period"] - grid["cohort"]).between(0, 5).all()


def test_prediction_grid():
    grid = prediction_grid(2013, 5)
    assert sorted(grid["period"].unique()) == [2014, 2015, 2016, 2017, 2018]
    assert grid.loc[grid["period"] == 2014, "cohort"].min() == 2009
    assert prediction_grid(2013, 0).empty
    with pytest.raises(ParameterError):
        prediction_grid(2013, -1)


def test_dominant_and_weighted_cohorts():
    grid = period_grid([2010])
    dominant = dominant_cohorts(grid)
    assert len(dominant) == 6
    assert dominant.loc[dominant["age_band"] == 0, "cohort"].item() == 2010
    weighted = cohort_weights(grid, "weighted")
    assert np.allclose(weighted.groupby(["age_band", "period"])["weight"].sum(), 1.0)
    assert (cohort_weights(grid)["weight"] == 1.0).all()
    with pytest.raises(ParameterError):
        cohort_weights(grid, "median")


def toy_frame():
    return aggregate_cells(expand_survey([
        record("a", (2008, 1), death=(2009, 3)),
        record("b", (2006, 5), interview=(2014, 1)),
        record("c", (2012, 2), death=(2013, 8), cluster="C3"),
    ]))


def test_layout_axes_cover_data_and_prediction():
    cells = toy_frame()
    layout = build_apc_layout(cells, "APC", extra=prediction_grid(2013, 2))
    assert layout.period_axis.values[0] == cells["period"].min()
    assert layout.period_axis.values[-1] == 2015
    assert layout.cohort_axis.values[0] == 2006
    assert len(layout.cells) == len(cells)
    assert layout.curvatures == ("age", "period", "cohort")
    assert layout.slopes == ("age", "period")


def test_layout_variants():
    cells = toy_frame()
    assert build_apc_layout(cells, "AC").slopes == ("age", "cohort")
    assert build_apc_layout(cells, "AP").curvatures == ("age", "period")
    assert build_apc_layout(cells, "APC", slopes=("age", "cohort")).slopes == ("age", "cohort")
    with pytest.raises(ModelAssemblyError):
        build_apc_layout(cells, "PC")
    with pytest.raises(ModelAssemblyError):
        build_apc_layout(cells.iloc[:0], "APC")
    with pytest.raises(ModelAssemblyError):
        build_apc_layout(cells, "APC", slopes=("period", "cohort"))


def test_index_cells_rejects_unknown_band():
    layout = build_apc_layout(toy_frame(), "APC")
    with pytest.raises(ModelAssemblyError):
        layout.index_cells(pd.DataFrame({"age_band": [6], "period": [2010], "cohort": [2008]}))
