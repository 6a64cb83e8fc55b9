"""Penalised-complexity priors for the model hyperparameters.

Every prior exposes its log-density on the natural scale and on the
unconstrained internal scale used by the optimiser (log precision, logit
mixing, logit overdispersion); the internal versions include the Jacobian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import ParameterError

logger = logging.getLogger(__name__)

MIXING_GRID_SIZE = 2001
MIXING_LOGIT_RANGE = (-12.0, 12.0)


@dataclass(frozen=True)
class PcPriorSpec:
    """Tail statement ``P(parameter > U) = p`` (``P(phi < U) = p`` for mixing)."""

    U: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.U) and self.U > 0):
            raise ParameterError(f"PC prior bound U must be positive, got {self.U}")
        if not 0.0 < self.p < 1.0:
            raise ParameterError(f"PC prior probability must lie in (0, 1), got {self.p}")

    @property
    def rate(self) -> float:
        return -math.log(self.p) / self.U


def pc_prior_precision(spec: PcPriorSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Log-density of a precision ``tau`` whose standard deviation is
    exponential with ``P(sigma > U) = p``."""
    lam = spec.rate

    def log_density(tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = math.log(lam / 2.0) - 1.5 * np.log(tau) - lam / np.sqrt(tau)
        return np.where(tau > 0, out, -np.inf)

    return log_density


def pc_prior_log_precision(spec: PcPriorSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Same prior on ``theta = log tau``."""
    lam = spec.rate

    def log_density(theta):
        theta = np.asarray(theta, dtype=float)
        return math.log(lam / 2.0) - 0.5 * theta - lam * np.exp(-0.5 * theta)

    return log_density


def _kld_terms(x: np.ndarray) -> np.ndarray:
    """``x - log(1 + x)`` accurate for small ``x``."""
    small = np.abs(x) < 1e-4
    series = x**2 / 2 - x**3 / 3 + x**4 / 4
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = x - np.log1p(x)
    return np.where(small, series, direct)


def mixing_distance(phi: np.ndarray, eigenvalues: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance ``sqrt(2 KLD(phi))`` from the unstructured base model and its
    derivative, given the nonzero eigenvalues of the scaled structure."""
    gamma = 1.0 / np.asarray(eigenvalues, dtype=float)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    x = phi[:, None] * (gamma - 1.0)
    kld = 0.5 * _kld_terms(x).sum(axis=1)
    kld_prime = 0.5 * (phi[:, None] * (gamma - 1.0) ** 2 / (1.0 + x)).sum(axis=1)
    distance = np.sqrt(2.0 * np.maximum(kld, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        derivative = np.where(distance > 0, kld_prime / distance, np.sqrt(0.5 * np.sum((gamma - 1.0) ** 2)))
    return distance, derivative


def _truncated_exponential_rate(a: float, b: float, p: float) -> float:
    """Rate ``theta`` of an exponential on ``[0, b]`` with ``P(d < a) = p``.

    The rate is negative when the statement asks for more mass below ``a``
    than a uniform distance would put there.
    """
    if abs(p - a / b) < 1e-12:
        return 0.0

    def excess(theta):
        if abs(theta) < 1e-12:
            return a / b - p
        return math.expm1(-theta * a) / math.expm1(-theta * b) - p

    return brentq(excess, -700.0 / b, 700.0 / a, xtol=1e-14)


class PcMixingPrior:
    """PC prior for the BYM2 mixing parameter, tabulated on a logit grid.

    Calibrated so that ``P(phi < U) = p``.
    """

    def __init__(self, spec: PcPriorSpec, eigenvalues: np.ndarray):
        if not 0.0 < spec.U < 1.0:
            raise ParameterError(f"mixing bound must lie in (0, 1), got {spec.U}")
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        if eigenvalues.size == 0 or np.any(eigenvalues <= 0):
            raise ParameterError("mixing prior needs the positive eigenvalues of the scaled structure")
        self.spec = spec
        self.eigenvalues = eigenvalues
        (d_bound,), _ = mixing_distance(np.array([spec.U]), eigenvalues)
        (d_max,), _ = mixing_distance(np.array([1.0]), eigenvalues)
        if d_max <= 0:
            raise ParameterError("scaled structure does not differ from the base model")
        self.rate = _truncated_exponential_rate(d_bound, d_max, spec.p)
        self.d_max = d_max
        self.logit_grid = np.linspace(*MIXING_LOGIT_RANGE, MIXING_GRID_SIZE)
        phi = expit(self.logit_grid)
        distance, derivative = mixing_distance(phi, eigenvalues)
        self.log_density_grid = self._distance_log_density(distance) + np.log(derivative)
        logger.debug("mixing prior rate %.4f, maximal distance %.4f", self.rate, d_max)

    def _distance_log_density(self, distance: np.ndarray) -> np.ndarray:
        theta, b = self.rate, self.d_max
        if theta == 0.0:
            return np.full_like(distance, -math.log(b))
        # log(theta exp(-theta d) / (1 - exp(-theta b)))
        return math.log(abs(theta)) - theta * distance - math.log(abs(-math.expm1(-theta * b)))

    def log_density(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        with np.errstate(divide="ignore"):
            z = logit(np.clip(phi, 1e-300, 1.0))
        out = np.interp(z, self.logit_grid, self.log_density_grid)
        return np.where((phi >= 0) & (phi <= 1), out, -np.inf)

    def log_density_logit(self, theta) -> np.ndarray:
        """Density of ``logit(phi)``."""
        theta = np.asarray(theta, dtype=float)
        base = np.interp(theta, self.logit_grid, self.log_density_grid)
        return base - np.logaddexp(0.0, theta) - np.logaddexp(0.0, -theta)

    log_density_internal = log_density_logit


def pc_prior_mixing(spec: PcPriorSpec, eigenvalues: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Log-density function of the BYM2 mixing parameter."""
    return PcMixingPrior(spec, eigenvalues).log_density


@dataclass(frozen=True)
class OverdispersionPrior:
    """Exponential prior on the beta-binomial overdispersion with
    ``P(d > U) = p``, truncated to ``(0, 1)``."""

    spec: PcPriorSpec = PcPriorSpec(U=0.05, p=0.01)

    def __post_init__(self):
        if self.spec.U >= 1.0:
            raise ParameterError(f"overdispersion bound must lie in (0, 1), got {self.spec.U}")

    def log_density(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        lam = self.spec.rate
        out = math.log(lam) - lam * d - math.log(-math.expm1(-lam))
        return np.where((d > 0) & (d < 1), out, -np.inf)

    def log_density_logit(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        d = expit(theta)
        return self.log_density(d) - np.logaddexp(0.0, theta) - np.logaddexp(0.0, -theta)

    log_density_internal = log_density_logit


def overdispersion_prior(U: float = 0.05, p: float = 0.01) -> OverdispersionPrior:
    return OverdispersionPrior(PcPriorSpec(U, p))


def fixed_effect_log_density(beta: np.ndarray, variance: float) -> float:
    """Independent ``Normal(0, variance)`` log-density of the fixed effects."""
    if variance <= 0:
        raise ParameterError(f"fixed-effect variance must be positive, got {variance}")
    beta = np.asarray(beta, dtype=float)
    return float(-0.5 * beta.size * math.log(2 * math.pi * variance) - 0.5 * beta @ beta / variance)


@dataclass(frozen=True)
class PcPrecisionPrior:
    spec: PcPriorSpec

    def log_density(self, tau) -> np.ndarray:
        return pc_prior_precision(self.spec)(tau)

    def log_density_internal(self, theta) -> np.ndarray:
        return pc_prior_log_precision(self.spec)(theta)
