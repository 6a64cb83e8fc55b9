"""Empirical-Bayes Laplace engine.

``find_mode`` runs constrained Newton iterations for the latent field at fixed
hyperparameters, ``log_posterior_hyper`` evaluates the Laplace approximation of
the hyperparameter posterior, ``optimize_hyper`` maximises it on the internal
scale and ``sample_latent`` draws from the Gaussian approximation with
conditioning by kriging.  Intrinsic blocks are made invertible by adding a
null-space term that leaves their quadratic form unchanged on the constraint
set.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.stats import norm

from .config import OptimizerConfig
from .errors import ConvergenceError, ParameterError, StructureError
from .gmrf import ConstraintProjector, SparseFactor, constrained_logdet
from .model import HyperParams, LatentModel, from_internal_scale

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-12
LINE_SEARCH_SLOPE = 1e-4
MIN_STEP = 1e-10
INTERNAL_BOUNDS = {"log": (-10.0, 15.0), "phi": (-8.0, 8.0), "dispersion": (-15.0, 0.0)}
MCMC_MAX_DIM = 200

Theta = Union[HyperParams, Sequence[float], np.ndarray]


@dataclass
class GaussianApprox:
    """Gaussian approximation of the latent field at fixed hyperparameters."""

    mode: np.ndarray
    precision: sp.csc_matrix
    factor: SparseFactor
    projector: ConstraintProjector
    theta: HyperParams
    log_likelihood: float
    iterations: int
    log_marginal: float = math.nan

    def marginal_variances(self) -> np.ndarray:
        """Diagonal of the constrained posterior covariance."""
        inverse_diag = np.diag(self.factor.solve(np.eye(self.mode.size)))
        correction = self.projector.conditional_covariance_correction()
        return inverse_diag - np.sum(correction**2, axis=1)


@dataclass
class PosteriorDraws:
    """Joint latent draws, one row per draw."""

    latent: np.ndarray
    seed: Optional[int] = None
    point: Optional[np.ndarray] = None

    @property
    def n_draws(self) -> int:
        return self.latent.shape[0]

    def linear_predictor(self, design) -> np.ndarray:
        """``(n_draws, n_rows)`` linear predictors for the given design rows."""
        return np.asarray((design @ self.latent.T).T)


def _resolve_theta(model: LatentModel, theta: Theta) -> HyperParams:
    if isinstance(theta, HyperParams):
        model.check_hyper(theta)
        return theta
    return HyperParams.from_internal(model.hyper_names, np.asarray(theta, dtype=float))


def _augmented_prior(model: LatentModel, theta: HyperParams) -> sp.csc_matrix:
    return sp.csc_matrix(model.prior_precision(theta) + model.augmentation(theta))


def find_mode(
    model: LatentModel,
    theta: Theta,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> GaussianApprox:
    """Newton iterations restricted to ``{x : A x = e}``.

    Each step maximises the local quadratic model on the constraint set, a
    backtracking line search keeps the objective increasing, and convergence
    is declared when the projected gradient has max-norm below ``tol``.
    """
    theta = _resolve_theta(model, theta)
    dispersion = theta.get("dispersion", math.nan)
    q = _augmented_prior(model, theta)
    a, e = model.constraints, model.rhs
    x_design = model.design
    x_design_t = sp.csr_matrix(x_design.T)

    def objective(x):
        terms = model.likelihood.evaluate(x_design @ x, dispersion)
        return terms.total - 0.5 * float(x @ (q @ x)), terms

    if x0 is None:
        x = np.zeros(model.dim)
    else:
        x = np.array(x0, dtype=float)
    if a.shape[0]:
        x = ConstraintProjector(SparseFactor(q), a, e).project(x)
    value, terms = objective(x)

    for iteration in range(1, max_iter + 1):
        gradient = x_design_t @ terms.gradient - q @ x
        weights = np.maximum(-terms.hessian, WEIGHT_FLOOR)
        hessian = sp.csc_matrix(q + x_design_t @ sp.diags(weights) @ x_design)
        try:
            factor = SparseFactor(hessian)
        except StructureError as exc:
            raise ConvergenceError(f"indefinite Hessian in Newton iteration {iteration}: {exc}") from None
        step_projector = ConstraintProjector(factor, a, np.zeros(a.shape[0]))
        step = step_projector.project(factor.solve(gradient))
        projected_gradient = float(np.max(np.abs(hessian @ step))) if step.size else 0.0
        logger.debug("newton %d: objective %.6f, projected gradient %.3e", iteration, value, projected_gradient)
        if projected_gradient < tol:
            projector = ConstraintProjector(factor, a, e)
            mode = projector.project_twice(x)
            return GaussianApprox(
                mode=mode,
                precision=hessian,
                factor=factor,
                projector=projector,
                theta=theta,
                log_likelihood=objective(mode)[1].total,
                iterations=iteration,
            )
        slope = float(gradient @ step)
        size = 1.0
        while True:
            candidate = x + size * step
            new_value, new_terms = objective(candidate)
            if np.isfinite(new_value) and new_value >= value + LINE_SEARCH_SLOPE * size * slope:
                break
            size *= 0.5
            if size < MIN_STEP:
                if projected_gradient < 1e3 * tol:
                    # rounding floor of the objective reached
                    projector = ConstraintProjector(factor, a, e)
                    mode = projector.project_twice(x)
                    return GaussianApprox(mode, hessian, factor, projector, theta, objective(mode)[1].total, iteration)
                raise ConvergenceError(f"line search failed in Newton iteration {iteration}")
        x, value, terms = candidate, new_value, new_terms
    raise ConvergenceError(f"Newton iterations did not converge within {max_iter} iterations")


def laplace(
    model: LatentModel,
    theta: Theta,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> tuple[float, Optional[GaussianApprox]]:
    """Laplace log posterior of the hyperparameters and the approximation it
    was computed from; ``-inf`` and ``None`` outside the domain."""
    try:
        resolved = _resolve_theta(model, theta)
        internal = resolved.to_internal(model.hyper_names)
        q = _augmented_prior(model, resolved)
    except (ParameterError, OverflowError, ValueError):
        return -math.inf, None
    if not np.all(np.isfinite(internal)):
        return -math.inf, None
    approx = find_mode(model, resolved, x0=x0, tol=tol, max_iter=max_iter)
    prior_factor = SparseFactor(q)
    prior_projector = ConstraintProjector(prior_factor, model.constraints, model.rhs)
    x = approx.mode
    value = (
        model.log_prior_hyper(internal)
        + approx.log_likelihood
        - 0.5 * float(x @ (q @ x))
        + 0.5 * constrained_logdet(prior_factor, prior_projector)
        - 0.5 * constrained_logdet(approx.factor, approx.projector)
    )
    approx.log_marginal = value
    return value, approx


def log_posterior_hyper(model: LatentModel, theta: Theta, x0: Optional[np.ndarray] = None) -> float:
    """Laplace approximation of ``log p(theta | y)`` up to a constant, with
    ``theta`` as :class:`HyperParams` or an internal-scale vector."""
    return laplace(model, theta, x0=x0)[0]


def internal_bounds(names: Sequence[str]) -> list[tuple[float, float]]:
    return [INTERNAL_BOUNDS.get(n, INTERNAL_BOUNDS["log"]) for n in names]


@dataclass
class HyperOptimum:
    theta: HyperParams
    internal: np.ndarray
    hessian: np.ndarray
    log_posterior: float
    evaluations: int
    iterations: int
    converged: bool
    message: str
    approx: GaussianApprox
    seconds: float = 0.0

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.hessian)


class _Objective:
    """Negative Laplace log posterior on the internal scale with memoisation
    and warm starts of the Newton iterations."""

    def __init__(self, model: LatentModel, config: OptimizerConfig):
        self.model = model
        self.config = config
        self.cache: dict[tuple, tuple[float, Optional[GaussianApprox]]] = {}
        self.last_mode: Optional[np.ndarray] = None
        self.evaluations = 0

    def evaluate(self, internal: np.ndarray) -> tuple[float, Optional[GaussianApprox]]:
        key = tuple(np.round(np.asarray(internal, dtype=float), 12))
        if key not in self.cache:
            self.evaluations += 1
            try:
                value, approx = laplace(
                    self.model, np.array(key), x0=self.last_mode,
                    tol=self.config.newton_tolerance, max_iter=self.config.newton_max_iterations,
                )
            except ConvergenceError as exc:
                logger.debug("inner loop failed at %s: %s", key, exc)
                value, approx = -math.inf, None
            if approx is not None:
                self.last_mode = approx.mode
            self.cache[key] = (value, approx)
            logger.debug("hyper evaluation %d: %s -> %.6f", self.evaluations, np.round(key, 4), value)
        return self.cache[key]

    def __call__(self, internal: np.ndarray) -> float:
        value = self.evaluate(internal)[0]
        return -value if np.isfinite(value) else 1e300

    def gradient(self, internal: np.ndarray) -> np.ndarray:
        h = self.config.gradient_step
        out = np.empty(internal.size)
        for i in range(internal.size):
            step = np.zeros(internal.size)
            step[i] = h
            out[i] = (self(internal + step) - self(internal - step)) / (2 * h)
        return out

    def hessian(self, internal: np.ndarray) -> np.ndarray:
        h = self.config.hessian_step
        k = internal.size
        f0 = self(internal)
        out = np.empty((k, k))
        unit = np.eye(k) * h
        for i in range(k):
            out[i, i] = (self(internal + unit[i]) - 2 * f0 + self(internal - unit[i])) / h**2
            for j in range(i):
                out[i, j] = out[j, i] = (
                    self(internal + unit[i] + unit[j]) - self(internal + unit[i] - unit[j])
                    - self(internal - unit[i] + unit[j]) + self(internal - unit[i] - unit[j])
                ) / (4 * h**2)
        return out


def _positive_definite(hessian: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh(0.5 * (hessian + hessian.T))
    floor = 1e-6 * max(1.0, float(np.max(np.abs(eigenvalues))))
    if np.any(eigenvalues < floor):
        logger.warning("clipping %d non-positive curvature directions of the hyper Hessian", int(np.sum(eigenvalues < floor)))
        eigenvalues = np.maximum(eigenvalues, floor)
    return (vectors * eigenvalues) @ vectors.T


def optimize_hyper(
    model: LatentModel,
    theta0: Optional[Theta] = None,
    config: Optional[OptimizerConfig] = None,
) -> HyperOptimum:
    """Maximise the Laplace log posterior over the internal hyperparameters.

    Returns the argmax and the finite-difference Hessian of the negative log
    posterior there.
    """
    config = config or OptimizerConfig()
    if config.max_evaluations < 1:
        raise ParameterError(f"the evaluation budget must be at least 1, got {config.max_evaluations}")
    started = time.perf_counter()
    names = model.hyper_names
    if theta0 is None:
        theta0 = model.default_hyper()
    bounds = internal_bounds(names)
    start = _resolve_theta(model, theta0).to_internal(names)
    start = np.clip(start, [b[0] for b in bounds], [b[1] for b in bounds])
    objective = _Objective(model, config)
    if objective(start) >= 1e300:
        raise ConvergenceError("the Laplace approximation failed at the starting hyperparameters")
    if config.method == "L-BFGS-B":
        result = minimize(
            objective, start, jac=objective.gradient, method="L-BFGS-B", bounds=bounds,
            options={"maxfun": config.max_evaluations, "maxiter": config.max_evaluations,
                     "gtol": config.gradient_tolerance},
        )
        exhausted = result.status == 1
    else:
        result = minimize(
            objective, start, method="Nelder-Mead",
            options={"maxfev": config.max_evaluations, "xatol": 1e-4, "fatol": 1e-7},
        )
        exhausted = not result.success
    if exhausted:
        raise ConvergenceError(
            f"hyperparameter optimisation stopped after {objective.evaluations} evaluations: {result.message}"
        )
    if not result.success:
        logger.warning("hyperparameter optimiser stopped early: %s", result.message)
    internal = np.asarray(result.x, dtype=float)
    value, approx = objective.evaluate(internal)
    if approx is None:
        raise ConvergenceError("the Laplace approximation failed at the optimum")
    hessian = _positive_definite(objective.hessian(internal))
    theta = HyperParams.from_internal(names, internal)
    logger.info("hyperparameter optimum %s after %d evaluations", theta, objective.evaluations)
    return HyperOptimum(
        theta=theta,
        internal=internal,
        hessian=hessian,
        log_posterior=value,
        evaluations=objective.evaluations,
        iterations=int(getattr(result, "nit", 0)),
        converged=bool(result.success),
        message=str(result.message),
        approx=approx,
        seconds=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# integration over the hyperparameters

def _factorial_corners(k: int) -> np.ndarray:
    if k < 2:
        return np.zeros((0, k))
    if k <= 4:
        return np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
    half = np.array(list(itertools.product((-1.0, 1.0), repeat=k - 1)))
    return np.hstack([half, np.prod(half, axis=1, keepdims=True)])


@dataclass(frozen=True)
class CcdDesign:
    points: np.ndarray
    base_weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def ccd_design(theta_hat: np.ndarray, hessian: np.ndarray, f0: float = 1.1) -> CcdDesign:
    """Central composite design on the internal scale.

    Points are the centre, ``2k`` axial points and two-level factorial corners
    (a half fraction from five dimensions on), all non-centre points at radius
    ``f0 sqrt(k)`` in the standardised space.  Base weights still need the
    posterior density ratio at each point.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    k = theta_hat.size
    radius = f0 * math.sqrt(k)
    axial = np.vstack([np.eye(k) * radius, -np.eye(k) * radius])
    corners = _factorial_corners(k) * f0
    z = np.vstack([np.zeros((1, k)), axial, corners])
    eigenvalues, vectors = np.linalg.eigh(0.5 * (hessian + hessian.T))
    if np.any(eigenvalues <= 0):
        raise ParameterError("the Hessian at the optimum must be positive definite")
    points = theta_hat + z @ (vectors / np.sqrt(eigenvalues)).T
    n_points = z.shape[0]
    if n_points > 1:
        delta = 1.0 / ((n_points - 1) * (f0**2 - 1.0) * (1.0 + math.exp(-k * f0**2 / 2.0)))
    else:
        delta = 0.0
    weights = np.full(n_points, delta)
    weights[0] = 1.0
    return CcdDesign(points, weights)


def allocate_draws(weights: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder allocation of ``n`` draws proportional to weights."""
    weights = np.asarray(weights, dtype=float)
    share = weights / weights.sum() * n
    counts = np.floor(share).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


# ---------------------------------------------------------------------------
# sampling

def sample_latent(model: LatentModel, approx: GaussianApprox, n: int, seed: int) -> PosteriorDraws:
    """Draws from the Gaussian approximation, each corrected by kriging onto
    ``A x = e``."""
    if n <= 0:
        raise ParameterError(f"number of draws must be positive, got {n}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((model.dim, n))
    samples = approx.mode[:, None] + approx.factor.sample(z)
    samples = approx.projector.project_twice(samples)
    return PosteriorDraws(latent=np.ascontiguousarray(samples.T), seed=seed)


@dataclass
class McmcSummary:
    mean: np.ndarray
    sd: np.ndarray
    acceptance_rate: float
    n_samples: int
    scale: float


def _log_target(model: LatentModel, q: sp.csc_matrix, dispersion: float, x: np.ndarray) -> float:
    return model.likelihood.evaluate(model.design @ x, dispersion).total - 0.5 * float(x @ (q @ x))


def mcmc_reference(
    model: LatentModel,
    theta: Theta,
    iterations: int,
    seed: int,
    burn_in: Optional[int] = None,
    batch: int = 1000,
) -> McmcSummary:
    """Random-walk Metropolis on the latent field at fixed hyperparameters.

    Proposals are preconditioned by the Laplace precision and projected onto
    the constraint set; the scale adapts during burn-in towards an acceptance
    rate of 0.234.
    """
    theta = _resolve_theta(model, theta)
    if model.dim > MCMC_MAX_DIM:
        raise ParameterError(f"MCMC reference is limited to {MCMC_MAX_DIM} latent dimensions, got {model.dim}")
    if iterations < 1:
        raise ParameterError("MCMC needs at least one iteration")
    burn_in = iterations // 5 if burn_in is None else burn_in
    approx = find_mode(model, theta)
    q = _augmented_prior(model, theta)
    dispersion = theta.get("dispersion", math.nan)
    increments = ConstraintProjector(approx.factor, model.constraints, np.zeros(model.constraints.shape[0]))
    free = max(model.dim - model.constraints.shape[0], 1)
    scale = 2.38 / math.sqrt(free)
    rng = np.random.default_rng(seed)

    x = approx.mode.copy()
    current = _log_target(model, q, dispersion, x)
    total = np.zeros(model.dim)
    total_sq = np.zeros(model.dim)
    accepted_window = accepted_after = kept = 0
    done = 0
    while done < burn_in + iterations:
        size = min(batch, burn_in + iterations - done)
        moves = increments.project(approx.factor.sample(rng.standard_normal((model.dim, size)))).T
        uniforms = np.log(rng.uniform(size=size))
        for j in range(size):
            proposal = x + scale * moves[j]
            value = _log_target(model, q, dispersion, proposal)
            accept = uniforms[j] < value - current
            if accept:
                x, current = proposal, value
            if done < burn_in:
                accepted_window += accept
                if (done + 1) % 100 == 0:
                    scale *= math.exp(accepted_window / 100 - 0.234)
                    accepted_window = 0
            else:
                accepted_after += accept
                total += x
                total_sq += x * x
                kept += 1
            done += 1
    mean = total / kept
    sd = np.sqrt(np.maximum(total_sq / kept - mean**2, 0.0))
    rate = accepted_after / kept
    logger.info("MCMC reference: %d kept draws, acceptance %.3f", kept, rate)
    return McmcSummary(mean=mean, sd=sd, acceptance_rate=rate, n_samples=kept, scale=scale)


# ---------------------------------------------------------------------------
# bundled fit

@dataclass
class FitResult:
    model: LatentModel
    optimum: HyperOptimum
    approximations: list[GaussianApprox]
    weights: np.ndarray
    integration: str = "eb"
    timings: dict = field(default_factory=dict)

    @property
    def theta(self) -> HyperParams:
        return self.optimum.theta

    @property
    def approx(self) -> GaussianApprox:
        return self.optimum.approx

    def sample(self, n: int, seed: int) -> PosteriorDraws:
        """Draws from the plug-in approximation or, with CCD, a mixture over
        the design points with draws allocated by weight."""
        if len(self.approximations) == 1:
            draws = sample_latent(self.model, self.approximations[0], n, seed)
            draws.point = np.zeros(n, dtype=int)
            return draws
        counts = allocate_draws(self.weights, n)
        children = np.random.SeedSequence(seed).spawn(len(counts))
        parts, points = [], []
        for index, (count, approx, child) in enumerate(zip(counts, self.approximations, children)):
            if count:
                child_seed = int(child.generate_state(1)[0])
                parts.append(sample_latent(self.model, approx, int(count), child_seed).latent)
                points.append(np.full(count, index))
        return PosteriorDraws(np.vstack(parts), seed=seed, point=np.concatenate(points))

    def hyper_summary(self, quantiles: Sequence[float] = (0.025, 0.5, 0.975)) -> pd.DataFrame:
        """Quantiles of each hyperparameter from the Gaussian approximation
        of the internal scale at the optimum, mapped back to the natural scale."""
        sd = np.sqrt(np.diag(self.optimum.covariance))
        rows = []
        for name, centre, spread in zip(self.model.hyper_names, self.optimum.internal, sd):
            values = [from_internal_scale(name, centre + norm.ppf(q) * spread) for q in quantiles]
            rows.append({"parameter": name, **{f"q{q:g}": v for q, v in zip(quantiles, values)}})
        return pd.DataFrame(rows)

    def fixed_effect_summaries(
        self, draws: PosteriorDraws, quantiles: Sequence[float] = (0.025, 0.5, 0.975)
    ) -> pd.DataFrame:
        block = self.model.get_block("fixed")
        values = draws.latent[:, self.model.block_slice("fixed")]
        table = np.quantile(values, quantiles, axis=0)
        rows = [
            {"parameter": label, **{f"q{q:g}": table[i, j] for i, q in enumerate(quantiles)}}
            for j, label in enumerate(block.labels)
        ]
        return pd.DataFrame(rows)

    def parameter_summary(self, draws: PosteriorDraws) -> pd.DataFrame:
        fixed = self.fixed_effect_summaries(draws)
        fixed.insert(0, "kind", "fixed")
        hyper = self.hyper_summary()
        hyper.insert(0, "kind", "hyper")
        return pd.concat([fixed, hyper], ignore_index=True)

    def report_frame(self) -> pd.DataFrame:
        """One row per hyperparameter with the internal-scale optimum and Hessian."""
        names = self.model.hyper_names
        frame = pd.DataFrame(self.optimum.hessian, columns=[f"hessian_{n}" for n in names])
        frame.insert(0, "natural", [self.theta[n] for n in names])
        frame.insert(0, "internal", self.optimum.internal)
        frame.insert(0, "parameter", list(names))
        frame["log_posterior"] = self.optimum.log_posterior
        frame["evaluations"] = self.optimum.evaluations
        frame["optimizer_iterations"] = self.optimum.iterations
        frame["newton_iterations"] = self.approx.iterations
        frame["converged"] = self.optimum.converged
        frame["integration"] = self.integration
        return frame

    def to_dict(self) -> dict:
        return {
            "variant": self.model.variant,
            "hyper_names": list(self.model.hyper_names),
            "theta": {n: self.theta[n] for n in self.model.hyper_names},
            "internal": self.optimum.internal.tolist(),
            "hessian": self.optimum.hessian.tolist(),
            "log_posterior": self.optimum.log_posterior,
            "evaluations": self.optimum.evaluations,
            "converged": self.optimum.converged,
            "integration": self.integration,
            "ccd_weights": self.weights.tolist(),
            "ccd_points": [a.theta.to_internal(self.model.hyper_names).tolist() for a in self.approximations],
        }


def fit(
    model: LatentModel,
    config: Optional[OptimizerConfig] = None,
    theta0: Optional[Theta] = None,
) -> FitResult:
    """Hyperparameter optimum, Gaussian approximation there and, with CCD
    integration, approximations at every design point."""
    config = config or OptimizerConfig()
    optimum = optimize_hyper(model, theta0, config)
    approximations, weights = [optimum.approx], np.ones(1)
    if config.integration == "ccd" and len(model.hyper_names):
        design = ccd_design(optimum.internal, optimum.hessian, config.ccd_f0)
        approximations, raw = [optimum.approx], [1.0]
        for point, base in zip(design.points[1:], design.base_weights[1:]):
            value, approx = laplace(model, point, x0=optimum.approx.mode,
                                    tol=config.newton_tolerance, max_iter=config.newton_max_iterations)
            if approx is None or not np.isfinite(value):
                logger.warning("skipping CCD point outside the hyperparameter domain")
                continue
            approximations.append(approx)
            raw.append(base * math.exp(value - optimum.log_posterior))
        weights = np.asarray(raw) / np.sum(raw)
        logger.info("CCD integration over %d points", len(approximations))
    return FitResult(
        model=model,
        optimum=optimum,
        approximations=approximations,
        weights=weights,
        integration=config.integration,
        timings={"optimize_seconds": optimum.seconds},
    )


def refit_at(model: LatentModel, theta: HyperParams, config: Optional[OptimizerConfig] = None) -> GaussianApprox:
    """Gaussian approximation at given hyperparameters (no optimisation)."""
    config = config or OptimizerConfig()
    value, approx = laplace(model, theta, tol=config.newton_tolerance, max_iter=config.newton_max_iterations)
    if approx is None:
        raise ParameterError(f"hyperparameters {theta} lie outside the model domain")
    return approx
