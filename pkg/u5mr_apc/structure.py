"""Structured (possibly intrinsic) precision matrices shared by the spatial,
temporal and interaction blocks of the latent field.

A :class:`StructuredPrecision` is a sparse symmetric non-negative-definite
matrix together with its declared rank deficiency and the linear constraints
``A x = e`` that make an intrinsic field identifiable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import StructureError

logger = logging.getLogger(__name__)

# eigenvalue < RANK_TOLERANCE * largest eigenvalue counts as zero
RANK_TOLERANCE = 1e-8


@dataclass(frozen=True)
class StructuredPrecision:
    """Sparse structure matrix with its rank deficiency and constraints.

    ``null_basis`` optionally holds a sparse spanning set (columns) of the null
    space; when absent the constraint rows are used.  It only serves to build
    the augmentation that makes posterior precisions invertible.
    """

    matrix: sp.csr_matrix
    rank_deficiency: int
    constraints: np.ndarray
    rhs: np.ndarray
    null_basis: Optional[sp.csr_matrix] = field(default=None, compare=False)

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise StructureError(f"precision must be square, got {self.matrix.shape}")
        if self.rank_deficiency < 0:
            raise StructureError("rank deficiency must be non-negative")
        cons = np.atleast_2d(np.asarray(self.constraints, dtype=float))
        if cons.size == 0:
            cons = np.zeros((0, n))
        if cons.shape[1] != n:
            raise StructureError(f"constraints have {cons.shape[1]} columns for a {n}-dim structure")
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if rhs.shape[0] != cons.shape[0]:
            raise StructureError("constraint right-hand side does not match the number of rows")
        object.__setattr__(self, "matrix", sp.csr_matrix(self.matrix, dtype=float))
        object.__setattr__(self, "constraints", cons)
        object.__setattr__(self, "rhs", rhs)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraints.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self, factor: float) -> "StructuredPrecision":
        return replace(self, matrix=sp.csr_matrix(self.matrix * float(factor)))

    def quadratic_form(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ (self.matrix @ x))

    def null_augmentation(self) -> sp.csr_matrix:
        """PSD matrix whose range is the constrained null space.

        Adding it to the precision leaves the quadratic form unchanged on
        ``{x : A x = 0}`` while making the matrix invertible.
        """
        if self.null_basis is not None:
            basis = sp.csc_matrix(self.null_basis, dtype=float)
        else:
            basis = sp.csc_matrix(self.constraints.T)
        if basis.shape[1] == 0:
            return sp.csr_matrix((self.dim, self.dim))
        norms = np.sqrt(np.asarray(basis.multiply(basis).sum(axis=0))).ravel()
        norms[norms == 0] = 1.0
        basis = basis @ sp.diags(1.0 / norms)
        return sp.csr_matrix(basis @ basis.T)


def symmetric_eigh(matrix) -> tuple[np.ndarray, np.ndarray]:
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    dense = 0.5 * (dense + dense.T)
    return np.linalg.eigh(dense)


def zero_eigen_mask(eigenvalues: np.ndarray, tol: float = RANK_TOLERANCE) -> np.ndarray:
    scale = max(float(np.max(np.abs(eigenvalues))), 0.0) if eigenvalues.size else 0.0
    if scale == 0.0:
        return np.ones_like(eigenvalues, dtype=bool)
    return eigenvalues < tol * scale


def numerical_rank_deficiency(matrix, tol: float = RANK_TOLERANCE) -> int:
    eigenvalues, _ = symmetric_eigh(matrix)
    return int(np.count_nonzero(zero_eigen_mask(eigenvalues, tol)))


def null_space(matrix, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Orthonormal basis (rows) of the numerical null space."""
    eigenvalues, vectors = symmetric_eigh(matrix)
    return vectors[:, zero_eigen_mask(eigenvalues, tol)].T


def check_rank(q: StructuredPrecision, tol: float = RANK_TOLERANCE) -> None:
    found = numerical_rank_deficiency(q.matrix, tol)
    if found != q.rank_deficiency:
        raise StructureError(
            f"structure has {found} zero eigenvalues but declares rank deficiency {q.rank_deficiency}"
        )


def generalized_variances(matrix, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Diagonal of the Moore-Penrose inverse.

    For a structure whose constraints span its null space this is the vector of
    marginal variances of the constrained field.
    """
    eigenvalues, vectors = symmetric_eigh(matrix)
    keep = ~zero_eigen_mask(eigenvalues, tol)
    return np.sum(vectors[:, keep] ** 2 / eigenvalues[keep], axis=1)


def geometric_mean(values: np.ndarray) -> float:
    return float(np.exp(np.mean(np.log(values))))


def scale_to_unit_variance(
    q: StructuredPrecision,
    groups: Optional[Sequence[np.ndarray]] = None,
    tol: float = RANK_TOLERANCE,
) -> StructuredPrecision:
    """Scale each group (connected block) so its generalized variances have
    geometric mean one.  Singleton groups are left unscaled."""
    check_rank(q, tol)
    if groups is None:
        groups = [np.arange(q.dim)]
    csr = q.matrix.tocsr()
    factors = np.ones(q.dim)
    for members in groups:
        members = np.asarray(members)
        if members.size < 2:
            logger.warning("skipping singleton component %s when scaling", members.tolist())
            continue
        block = csr[members][:, members]
        factors[members] = geometric_mean(generalized_variances(block, tol))
    root = sp.diags(np.sqrt(factors))
    return replace(q, matrix=sp.csr_matrix(root @ csr @ root))


def sample_intrinsic(
    q: StructuredPrecision,
    size: int,
    rng: np.random.Generator,
    precision: float = 1.0,
    tol: float = RANK_TOLERANCE,
) -> np.ndarray:
    """Draws ``(size, dim)`` from the intrinsic field ``N(0, (precision * Q)^+)``.

    Draws live in the range of ``Q`` and therefore satisfy any constraint whose
    rows span the null space.
    """
    eigenvalues, vectors = symmetric_eigh(q.matrix)
    keep = ~zero_eigen_mask(eigenvalues, tol)
    z = rng.standard_normal((size, int(keep.sum())))
    return (z / np.sqrt(precision * eigenvalues[keep])) @ vectors[:, keep].T


def logdet_spd(matrix: np.ndarray) -> float:
    chol = sla.cho_factor(np.asarray(matrix, dtype=float), lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(chol[0]))))


def block_diagonal(structures: Sequence[StructuredPrecision]) -> StructuredPrecision:
    """Stack structures into one block-diagonal structure with joint constraints."""
    matrix = sp.block_diag([s.matrix for s in structures], format="csr")
    n = matrix.shape[0]
    rows, rhs, offset = [], [], 0
    for s in structures:
        if s.n_constraints:
            padded = np.zeros((s.n_constraints, n))
            padded[:, offset:offset + s.dim] = s.constraints
            rows.append(padded)
            rhs.append(s.rhs)
        offset += s.dim
    constraints = np.vstack(rows) if rows else np.zeros((0, n))
    return StructuredPrecision(
        matrix=matrix,
        rank_deficiency=sum(s.rank_deficiency for s in structures),
        constraints=constraints,
        rhs=np.concatenate(rhs) if rhs else np.zeros(0),
        null_basis=sp.block_diag(
            [s.null_basis if s.null_basis is not None else sp.csr_matrix(s.constraints.T) for s in structures],
            format="csr",
        ),
    )
