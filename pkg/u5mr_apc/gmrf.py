"""Sparse Cholesky-type factorization of GMRF precisions.

The factorization runs a symmetric-mode SuperLU with an approximate minimum
degree ordering on ``Q + Q^T`` and no pivoting, so ``P Q P^T = L D L^T`` with
``U = D L^T``.  When SuperLU reports a non-symmetric permutation or a
non-positive pivot we fall back to a dense Cholesky, which also serves as the
positive-definiteness check.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve_triangular

from .errors import StructureError

logger = logging.getLogger(__name__)

ORDERING = "MMD_AT_PLUS_A"


class SparseFactor:
    """Factorization of a symmetric positive definite sparse matrix."""

    def __init__(self, matrix):
        csc = sp.csc_matrix(matrix, dtype=float)
        n = csc.shape[0]
        if csc.shape != (n, n):
            raise StructureError(f"cannot factorize a {csc.shape} matrix")
        self.dim = n
        self._lu = None
        self._chol = None
        try:
            lu = splu(csc, permc_spec=ORDERING, diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise StructureError(f"precision is singular: {exc}") from None
        pivots = lu.U.diagonal()
        if np.array_equal(lu.perm_r, lu.perm_c) and np.all(pivots > 0):
            self._lu = lu
            self._pivots = pivots
        else:
            logger.debug("symmetric-mode LU lost its ordering, using a dense Cholesky")
            try:
                self._chol = sla.cholesky(csc.toarray(), lower=True)
            except np.linalg.LinAlgError:
                raise StructureError("precision is not positive definite") from None

    @property
    def nnz(self) -> int:
        """Stored nonzeros of the triangular factors."""
        if self._lu is not None:
            return int(self._lu.L.nnz + self._lu.U.nnz)
        return int(np.count_nonzero(self._chol)) * 2

    def logdet(self) -> float:
        if self._lu is not None:
            return float(np.sum(np.log(self._pivots)))
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is not None:
            return self._lu.solve(rhs)
        return sla.cho_solve((self._chol, True), rhs)

    def sample(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals ``z`` of shape (n,) or (n, m) to N(0, Q^-1) draws."""
        z = np.asarray(z, dtype=float)
        vector = z.ndim == 1
        if vector:
            z = z[:, None]
        if self._lu is not None:
            scaled = np.sqrt(self._pivots)[:, None] * z
            w = spsolve_triangular(sp.csr_matrix(self._lu.U), scaled, lower=False)
            x = np.asarray(w)[self._lu.perm_c]
        else:
            x = sla.solve_triangular(self._chol.T, z, lower=False)
        return x[:, 0] if vector else x


class ConstraintProjector:
    """Conditioning by kriging on ``A x = e`` under precision ``Q``.

    ``x <- x - Q^-1 A^T (A Q^-1 A^T)^-1 (A x - e)``
    """

    def __init__(self, factor: SparseFactor, constraints: np.ndarray, rhs: np.ndarray):
        self.constraints = np.atleast_2d(np.asarray(constraints, dtype=float))
        self.rhs = np.asarray(rhs, dtype=float).reshape(-1)
        self.n_constraints = self.constraints.shape[0] if self.constraints.size else 0
        self.dim = factor.dim
        if self.n_constraints:
            self._v = factor.solve(self.constraints.T)
            if self._v.ndim == 1:
                self._v = self._v[:, None]
            self._w = self.constraints @ self._v
            self._w = 0.5 * (self._w + self._w.T)
            try:
                self._w_chol = sla.cho_factor(self._w, lower=True)
            except np.linalg.LinAlgError:
                raise StructureError("constraints are not identifiable under this precision") from None

    def residual(self, x: np.ndarray) -> np.ndarray:
        if not self.n_constraints:
            return np.zeros((0,) + np.shape(x)[1:])
        return self.constraints @ x - (self.rhs if np.ndim(x) == 1 else self.rhs[:, None])

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project a vector (n,) or a column stack (n, m)."""
        if not self.n_constraints:
            return np.array(x, dtype=float)
        return x - self._v @ sla.cho_solve(self._w_chol, self.residual(x))

    def project_twice(self, x: np.ndarray) -> np.ndarray:
        """Second pass removes the rounding left by the first one."""
        return self.project(self.project(x))

    def logdet_gram(self) -> float:
        """log det(A Q^-1 A^T)."""
        if not self.n_constraints:
            return 0.0
        return 2.0 * float(np.sum(np.log(np.diag(self._w_chol[0]))))

    def conditional_covariance_correction(self) -> np.ndarray:
        """Matrix ``C`` with ``Cov(x | Ax=e) = Q^-1 - C C^T``."""
        if not self.n_constraints:
            return np.zeros((self.dim, 0))
        return sla.solve_triangular(self._w_chol[0], self._v.T, lower=True).T


def constraint_gram_logdet(constraints: np.ndarray) -> float:
    """log det(A A^T)."""
    constraints = np.atleast_2d(constraints)
    if constraints.size == 0:
        return 0.0
    sign, value = np.linalg.slogdet(constraints @ constraints.T)
    if sign <= 0:
        raise StructureError("constraint rows are linearly dependent")
    return float(value)


def constrained_logdet(factor: SparseFactor, projector: ConstraintProjector) -> float:
    """Log-determinant of a precision restricted to ``{x : A x = 0}``.

    ``log|Q| + log|A Q^-1 A^T| - log|A A^T|`` for an invertible ``Q`` whose
    quadratic form is the one of interest on the constraint set.
    """
    return factor.logdet() + projector.logdet_gram() - constraint_gram_logdet(projector.constraints)
