import math

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from conftest import toy_cells
from u5mr_apc.errors import ModelAssemblyError, ParameterError
from u5mr_apc.gmrf import SparseFactor
from u5mr_apc.inference import find_mode
from u5mr_apc.model import HyperParams, assemble_model
from u5mr_apc.structure import numerical_rank_deficiency
from u5mr_apc.temporal import prediction_grid

APC_HYPER = ("dispersion", "tau_age", "tau_period", "tau_cohort", "tau_space", "phi", "tau_interaction")


@pytest.fixture
def square_cells(square4):
    return toy_cells(square4, range(2010, 2014))


def test_apc_layout_of_latent_vector(square4, square_cells):
    model = assemble_model(square_cells, square4)
    assert model.hyper_names == APC_HYPER
    assert model.dim == 4 + 6 + 4 + 9 + 8 + 16
    assert [b.name for b in model.blocks] == ["fixed", "age", "period", "cohort", "space", "interaction"]
    assert model.block_slice("cohort") == slice(14, 23)
    assert model.constraints.shape == (2 + 2 + 2 + 1 + 10, model.dim)
    assert model.fixed_labels == ("rural intercept", "urban increment", "age slope", "period slope")


def test_design_rows(square4, square_cells):
    model = assemble_model(square_cells, square4)
    design = model.design.toarray()
    assert design.shape == (len(square_cells), model.dim)
    assert np.all(design[:, 0] == 1.0)
    assert np.array_equal(design[:, 1], square_cells["urban"].to_numpy(dtype=float))
    # one indicator per curvature block, the spatial field and the interaction
    for name in ("age", "period", "cohort", "space", "interaction"):
        assert np.all(design[:, model.block_slice(name)].sum(axis=1) == 1.0)
    row = square_cells.iloc[0]
    region = square4.index()[row["region_id"]]
    period = int(row["period"]) - 2010
    assert design[0, model.block_slice("interaction").start + period * 4 + region] == 1.0
    # S enters the predictor, u* does not
    space = model.block_slice("space")
    assert np.all(design[:, space.start + 4:space.stop] == 0.0)


def test_variants_drop_curvature_blocks(kenya_like_graph):
    cells = toy_cells(kenya_like_graph, range(2006, 2014), urban=(0,))
    apc = assemble_model(cells, kenya_like_graph)
    assert apc.dim == 4 + 6 + 8 + 13 + 94 + 376
    assert assemble_model(cells, kenya_like_graph, variant="AP").dim == apc.dim - 13
    ac = assemble_model(cells, kenya_like_graph, variant="AC")
    assert ac.dim == apc.dim - 8
    assert ac.fixed_labels[3] == "cohort slope"
    assert "tau_period" not in ac.hyper_names


def test_augmented_prior_is_invertible(square4, square_cells):
    model = assemble_model(square_cells, square4)
    theta = model.default_hyper()
    q = model.prior_precision(theta)
    assert numerical_rank_deficiency(q) == model.constraints.shape[0]
    factor = SparseFactor(q + model.augmentation(theta))
    assert np.isfinite(factor.logdet())


def test_prediction_cells_extend_axes(square4, square_cells):
    extra = prediction_grid(2013, 2)
    model = assemble_model(square_cells, square4, extra=extra)
    assert model.layout.period_axis.values[-1] == 2015
    frame = extra.assign(region_id="C", urban=True)
    rows = model.design_for(frame)
    assert rows.shape == (len(frame), model.dim)
    assert np.all(rows.toarray()[:, 1] == 1.0)
    assert model.design_for(frame, spatial=False, interaction=False)[:, model.block_slice("space")].nnz == 0


def test_assembly_errors(square4, square_cells):
    with pytest.raises(ModelAssemblyError):
        assemble_model(square_cells.assign(region_id="Z"), square4)
    with pytest.raises(ModelAssemblyError):
        assemble_model(square_cells.iloc[:0], square4)
    short = toy_cells(square4, [2012, 2013])
    with pytest.raises(ModelAssemblyError):
        assemble_model(short, square4)
    model = assemble_model(square_cells, square4)
    with pytest.raises(ModelAssemblyError):
        model.design_for(pd.DataFrame({"age_band": [0], "period": [2012], "cohort": [2012], "region_id": ["Q"]}))
    with pytest.raises(ModelAssemblyError):
        assemble_model(square_cells, square4, max_interaction=10)


def test_subset_keeps_latent_field(square4, square_cells):
    model = assemble_model(square_cells, square4)
    part = model.subset(np.arange(10))
    assert part.dim == model.dim
    assert part.design.shape[0] == 10
    assert len(part.cells) == 10


def test_hyper_params_validation():
    theta = HyperParams(dispersion=0.02, phi=0.3, tau_age=4.0)
    names = ("dispersion", "phi", "tau_age")
    internal = theta.to_internal(names)
    assert internal[2] == pytest.approx(math.log(4.0))
    back = HyperParams.from_internal(names, internal)
    assert all(back[n] == pytest.approx(theta[n]) for n in names)
    assert theta.replace(phi=0.9)["phi"] == 0.9
    for bad in ({"dispersion": 1.0}, {"phi": -0.1}, {"tau_age": 0.0}, {"tau_age": math.nan}):
        with pytest.raises(ParameterError):
            HyperParams(bad)


def test_check_hyper(square4, square_cells):
    model = assemble_model(square_cells, square4)
    with pytest.raises(ParameterError):
        model.check_hyper(HyperParams(tau_age=1.0))
    model.check_hyper(model.default_hyper())
    assert model.default_hyper()["dispersion"] == 0.01


def test_unscaled_structures(square4, square_cells):
    scaled = assemble_model(square_cells, square4)
    raw = assemble_model(square_cells, square4, scale_structures=False)
    age = slice(4, 10)
    theta = scaled.default_hyper()
    assert not np.allclose(
        scaled.prior_precision(theta)[age, age].toarray(), raw.prior_precision(theta)[age, age].toarray()
    )
    assert isinstance(raw.prior_precision(theta), sp.csc_matrix)


def test_swapping_slopes_keeps_predictors(square4):
    # complete grid with cohort = period - age, so the two slope pairs span the same plane
    rng = np.random.default_rng(7)
    rows = []
    for region in square4.regions:
        for urban in (0, 1):
            for period in range(2010, 2014):
                for band in range(6):
                    exposure = int(rng.integers(200, 400))
                    rows.append({"age_band": band, "period": period, "cohort": period - band,
                                 "cluster_id": f"{region}-{urban}", "region_id": region, "urban": bool(urban),
                                 "deaths": int(rng.binomial(exposure, 0.01)), "exposure": exposure})
    cells = pd.DataFrame(rows)
    predictors = []
    for slopes in (("age", "period"), ("age", "cohort")):
        model = assemble_model(cells, square4, fixed_effect_variance=1e6, age_values=range(6), slopes=slopes)
        approx = find_mode(model, model.default_hyper(), tol=1e-8)
        predictors.append(model.linear_predictor(approx.mode))
    assert model.fixed_labels[3] == "cohort slope"
    assert np.abs(predictors[0] - predictors[1]).max() < 1e-6
