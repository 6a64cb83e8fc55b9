"""Observation models on the linear predictor.

Each likelihood returns per-observation log-likelihood values together with
their first and second derivatives with respect to the linear predictor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, gammaln, polygamma, psi

from .errors import ParameterError


class LikelihoodTerms(NamedTuple):
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.value))


def _check_counts(y: np.ndarray, n: np.ndarray) -> None:
    if np.any(y < 0) or np.any(y > n):
        raise ParameterError("deaths must satisfy 0 <= y <= n")


def betabinomial_loglik(y, n, eta, d) -> LikelihoodTerms:
    """Beta-binomial with mean ``expit(eta)`` and intra-cluster correlation ``d``.

    Shapes are ``pi (1 - d) / d`` and ``(1 - pi) (1 - d) / d``.
    """
    if not 0.0 < d < 1.0:
        raise ParameterError(f"overdispersion must lie in (0, 1), got {d}")
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check_counts(y, n)
    pi = expit(eta)
    s = (1.0 - d) / d
    a, b = pi * s, (1.0 - pi) * s
    value = (
        gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        + gammaln(y + a) + gammaln(n - y + b) - gammaln(n + s)
        - gammaln(a) - gammaln(b) + gammaln(s)
    )
    d_pi = s * (psi(y + a) - psi(a) - psi(n - y + b) + psi(b))
    d2_pi = s**2 * (polygamma(1, y + a) - polygamma(1, a) + polygamma(1, n - y + b) - polygamma(1, b))
    g = pi * (1.0 - pi)
    return LikelihoodTerms(value, d_pi * g, d2_pi * g**2 + d_pi * g * (1.0 - 2.0 * pi))


def binomial_loglik(y, n, eta) -> LikelihoodTerms:
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check_counts(y, n)
    pi = expit(eta)
    value = (
        gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        + y * eta - n * np.logaddexp(0.0, eta)
    )
    return LikelihoodTerms(value, y - n * pi, -n * pi * (1.0 - pi))


@dataclass(frozen=True)
class BetaBinomialLikelihood:
    deaths: np.ndarray
    exposure: np.ndarray

    has_dispersion = True

    def __post_init__(self):
        _check_counts(np.asarray(self.deaths, dtype=float), np.asarray(self.exposure, dtype=float))

    def __len__(self) -> int:
        return len(self.deaths)

    def evaluate(self, eta: np.ndarray, dispersion: float) -> LikelihoodTerms:
        return betabinomial_loglik(self.deaths, self.exposure, eta, dispersion)

    def subset(self, rows: np.ndarray) -> "BetaBinomialLikelihood":
        return BetaBinomialLikelihood(np.asarray(self.deaths)[rows], np.asarray(self.exposure)[rows])


@dataclass(frozen=True)
class GaussianLikelihood:
    """Gaussian observations with known variances (Fay-Herriot smoothing and
    conjugate checks of the Laplace engine)."""

    observations: np.ndarray
    variances: np.ndarray

    has_dispersion = False

    def __post_init__(self):
        if np.any(np.asarray(self.variances) <= 0):
            raise ParameterError("observation variances must be positive")

    def __len__(self) -> int:
        return len(self.observations)

    def evaluate(self, eta: np.ndarray, dispersion: float = math.nan) -> LikelihoodTerms:
        y = np.asarray(self.observations, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        resid = y - np.asarray(eta, dtype=float)
        value = -0.5 * np.log(2 * math.pi * v) - 0.5 * resid**2 / v
        return LikelihoodTerms(value, resid / v, -1.0 / v)

    def subset(self, rows: np.ndarray) -> "GaussianLikelihood":
        return GaussianLikelihood(np.asarray(self.observations)[rows], np.asarray(self.variances)[rows])
