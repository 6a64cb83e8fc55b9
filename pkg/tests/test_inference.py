import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit
from scipy.stats import multivariate_normal

from conftest import toy_cells
from u5mr_apc.aggregate import summary_table, u5mr_draws
from u5mr_apc.config import ModelConfig, OptimizerConfig
from u5mr_apc.data import aggregate_cells, expand_survey
from u5mr_apc.errors import ParameterError
from u5mr_apc.inference import (
    allocate_draws,
    ccd_design,
    find_mode,
    fit,
    internal_bounds,
    laplace,
    log_posterior_hyper,
    mcmc_reference,
    optimize_hyper,
    refit_at,
    sample_latent,
)
from u5mr_apc.likelihood import BetaBinomialLikelihood
from u5mr_apc.model import FixedEffects, HyperParams, LatentModel, ScaledStructure, assemble_model, gaussian_model
from u5mr_apc.priors import OverdispersionPrior, PcPriorSpec, pc_prior_log_precision
from u5mr_apc.structure import StructuredPrecision
from u5mr_apc.synth import SurveyDesign, SynthConfig, draw_survey, generate_population, population_proportions, true_u5mr
from u5mr_apc.temporal import period_grid

NOISE_SPEC = PcPriorSpec(1.0, 0.01)


def iid_structure(n):
    return StructuredPrecision(sp.identity(n, format="csr"), 0, np.zeros((0, n)), np.zeros(0))


def intercept_noise_model(y, v):
    n = len(y)
    design = sp.hstack([sp.csr_matrix(np.ones((n, 1))), sp.identity(n)], format="csr")
    blocks = [FixedEffects(("intercept",)), ScaledStructure("noise", iid_structure(n), "tau_noise")]
    return gaussian_model(design, y, v, blocks, {"tau_noise": NOISE_SPEC})


@pytest.fixture
def gaussian_data():
    rng = np.random.default_rng(12)
    n = 30
    v = rng.uniform(0.05, 0.15, n)
    y = 0.5 + rng.normal(0.0, 0.7, n) + rng.normal(0.0, np.sqrt(v))
    return y, v


@pytest.fixture
def square_model(square4):
    return assemble_model(toy_cells(square4, range(2010, 2014), seed=4), square4)


def test_fixed_only_mode_is_generalised_least_squares():
    rng = np.random.default_rng(0)
    x = np.column_stack([np.ones(20), rng.normal(size=20)])
    y = x @ np.array([1.0, -2.0]) + rng.normal(scale=0.3, size=20)
    v = np.full(20, 0.09)
    model = gaussian_model(sp.csr_matrix(x), y, v, [FixedEffects(("a", "b"))], {})
    approx = find_mode(model, HyperParams())
    expected = np.linalg.solve(x.T @ (x / v[:, None]) + np.eye(2) / 1000.0, x.T @ (y / v))
    assert np.allclose(approx.mode, expected, atol=1e-8)
    assert approx.iterations <= 3


def test_laplace_is_exact_for_gaussian_observations(gaussian_data):
    y, v = gaussian_data
    model = intercept_noise_model(y, v)
    tau = 2.0
    value = log_posterior_hyper(model, HyperParams(tau_noise=tau))
    n = len(y)
    cov = np.diag(v) + 1000.0 * np.ones((n, n)) + np.eye(n) / tau
    expected = multivariate_normal(np.zeros(n), cov).logpdf(y) + pc_prior_log_precision(NOISE_SPEC)(math.log(tau))
    assert value == pytest.approx(expected, abs=1e-6)


def test_laplace_outside_domain(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    assert log_posterior_hyper(model, np.array([1000.0])) == -math.inf
    value, approx = laplace(model, HyperParams(tau_other=1.0))
    assert value == -math.inf and approx is None


def test_optimum_matches_grid_search(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    grid = np.arange(-3.0, 5.0, 0.01)
    values = [log_posterior_hyper(model, np.array([t])) for t in grid]
    best = grid[int(np.argmax(values))]
    optimum = optimize_hyper(model)
    assert optimum.internal[0] == pytest.approx(best, abs=0.02)
    assert optimum.hessian[0, 0] > 0
    restarted = optimize_hyper(model, theta0=optimum.theta)
    assert restarted.internal[0] == pytest.approx(optimum.internal[0], abs=1e-4)


def test_nelder_mead_agrees(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    lbfgs = optimize_hyper(model)
    simplex = optimize_hyper(model, config=OptimizerConfig(method="Nelder-Mead"))
    assert simplex.internal[0] == pytest.approx(lbfgs.internal[0], abs=1e-2)


def test_budget_must_be_positive(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    with pytest.raises(ParameterError):
        optimize_hyper(model, config=OptimizerConfig(max_evaluations=0))


def test_internal_bounds():
    assert internal_bounds(["dispersion", "phi", "tau_age"]) == [(-15.0, 0.0), (-8.0, 8.0), (-10.0, 15.0)]


def test_mode_satisfies_constraints(square_model):
    approx = find_mode(square_model, square_model.default_hyper())
    residual = square_model.constraints @ approx.mode
    assert np.abs(residual).max() < 1e-8
    assert np.all(approx.marginal_variances() > -1e-10)


def test_draws_are_constrained_and_reproducible(square_model):
    approx = find_mode(square_model, square_model.default_hyper())
    draws = sample_latent(square_model, approx, 25, seed=8)
    assert draws.latent.shape == (25, square_model.dim)
    assert np.abs(draws.latent @ square_model.constraints.T).max() < 1e-8
    again = sample_latent(square_model, approx, 25, seed=8)
    assert np.array_equal(draws.latent, again.latent)
    assert draws.linear_predictor(square_model.design).shape == (25, square_model.design.shape[0])
    with pytest.raises(ParameterError):
        sample_latent(square_model, approx, 0, seed=8)


def test_draw_moments_follow_the_approximation(square_model):
    approx = find_mode(square_model, square_model.default_hyper())
    draws = sample_latent(square_model, approx, 4000, seed=1)
    sd = np.sqrt(np.maximum(approx.marginal_variances(), 1e-30))
    free = sd > 1e-6
    z = (draws.latent.mean(axis=0) - approx.mode)[free] / sd[free]
    assert np.abs(z).max() < 0.1
    ratio = draws.latent.std(axis=0)[free] / sd[free]
    assert np.all(np.abs(ratio - 1) < 0.1)


def test_no_deaths_gives_low_finite_hazards(square4):
    cells = toy_cells(square4, range(2010, 2014), hazard=0.0)
    model = assemble_model(cells, square4)
    approx = find_mode(model, model.default_hyper())
    eta = model.design @ approx.mode
    assert np.all(np.isfinite(eta))
    assert np.all(eta < -3)


def test_ccd_design_size():
    for k, expected in [(1, 3), (2, 9), (3, 15), (4, 25), (5, 27)]:
        design = ccd_design(np.zeros(k), np.eye(k))
        assert design.n_points == expected
        assert design.base_weights[0] == 1.0
    with pytest.raises(ParameterError):
        ccd_design(np.zeros(2), -np.eye(2))


def test_ccd_points_sit_on_the_sphere():
    hessian = np.array([[4.0, 1.0], [1.0, 2.0]])
    design = ccd_design(np.array([1.0, -1.0]), hessian, f0=1.5)
    offsets = design.points[1:] - np.array([1.0, -1.0])
    radius = np.sqrt(np.einsum("ij,jk,ik->i", offsets, hessian, offsets))
    assert np.allclose(radius, 1.5 * math.sqrt(2))


def test_allocate_draws():
    counts = allocate_draws(np.array([0.5, 0.3, 0.2]), 7)
    assert counts.sum() == 7
    assert counts.tolist() == [4, 2, 1]


def test_ccd_fit_mixes_design_points(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    result = fit(model, OptimizerConfig(integration="ccd"))
    assert len(result.approximations) == 3
    assert result.weights.sum() == pytest.approx(1.0)
    draws = result.sample(100, seed=3)
    assert draws.n_draws == 100
    assert set(np.unique(draws.point)) <= {0, 1, 2}
    summary = result.hyper_summary()
    assert summary["parameter"].tolist() == ["tau_noise"]
    assert result.to_dict()["integration"] == "ccd"


def test_refit_at_given_hyper(gaussian_data):
    model = intercept_noise_model(*gaussian_data)
    approx = refit_at(model, HyperParams(tau_noise=3.0))
    assert approx.theta["tau_noise"] == 3.0


def test_mcmc_dimension_limit():
    y = np.zeros(250)
    model = intercept_noise_model(y, np.ones(250))
    with pytest.raises(ParameterError):
        mcmc_reference(model, HyperParams(tau_noise=1.0), 10, seed=0)


@pytest.mark.slow
def test_mcmc_agrees_with_conjugate_posterior():
    rng = np.random.default_rng(2)
    v = np.full(10, 0.2)
    y = 1.0 + rng.normal(0.0, 0.8, 10)
    model = intercept_noise_model(y, v)
    theta = HyperParams(tau_noise=1.5)
    x = model.design.toarray()
    q = model.prior_precision(theta).toarray()
    cov = np.linalg.inv(x.T @ (x / v[:, None]) + q)
    mean = cov @ x.T @ (y / v)
    summary = mcmc_reference(model, theta, 200_000, seed=9)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(summary.mean - mean) < 0.1 * sd)
    assert np.allclose(summary.sd, sd, rtol=0.1)
    assert 0.1 < summary.acceptance_rate < 0.6


@pytest.mark.slow
def test_laplace_mode_near_mcmc_for_counts():
    design = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
    likelihood = BetaBinomialLikelihood(np.array([60.0, 40.0]), np.array([2000.0, 22000.0]))
    model = LatentModel(
        design=design,
        likelihood=likelihood,
        blocks=(FixedEffects(("intercept", "contrast")),),
        hyper_priors={"dispersion": OverdispersionPrior()},
    )
    theta = HyperParams(dispersion=1e-4)
    approx = find_mode(model, theta)
    summary = mcmc_reference(model, theta, 100_000, seed=4)
    assert expit(approx.mode[0]) == pytest.approx(0.03, rel=0.05)
    assert np.all(np.abs(summary.mean - approx.mode) < 0.25 * summary.sd)


@pytest.mark.slow
def test_apc_intervals_cover_synthetic_truth():
    synth = SynthConfig()
    population = generate_population(synth, seed=2014)
    survey = draw_survey(population, SurveyDesign(clusters_per_stratum=17, households_per_cluster=25), seed=2015)
    months = expand_survey(survey.records)
    periods = synth.periods
    cells = aggregate_cells(months[months["period"].between(periods[0], periods[-1])])
    config = ModelConfig()
    model = config.assemble(cells, population.graph, extra=period_grid(periods))
    draws = fit(model, config.optimizer).sample(1000, 0)
    table = summary_table(u5mr_draws(model, draws, periods, None, config.collapse), population_proportions(population))
    truth = true_u5mr(population, collapse=config.collapse)
    regions = table[table["level"] == "region"].merge(
        truth[truth["level"] == "region"][["region", "period", "u5mr"]], on=["region", "period"])
    assert len(regions) >= 300
    covered = (regions["lower"] <= 1000 * regions["u5mr"]) & (1000 * regions["u5mr"] <= regions["upper"])
    assert 0.88 <= covered.mean() <= 0.99
