"""Type IV space-period interaction.

The latent vector is ordered with the region index running fastest inside
each period: entry ``p * S + r`` is the effect of region ``r`` in period ``p``,
which matches ``kron(Q_period, Q_space)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ModelAssemblyError, StructureError
from .structure import RANK_TOLERANCE, StructuredPrecision, symmetric_eigh, zero_eigen_mask

logger = logging.getLogger(__name__)

DEFAULT_MAX_SIZE = 5000


@dataclass(frozen=True)
class InteractionBlock:
    precision: sp.csr_matrix
    n_periods: int
    n_regions: int
    nullity: int
    null_basis: sp.csr_matrix
    constraints: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.n_periods * self.n_regions

    def index(self, period: np.ndarray, region: np.ndarray) -> np.ndarray:
        return np.asarray(period) * self.n_regions + np.asarray(region)

    def structure(self) -> StructuredPrecision:
        if self.constraints is None:
            raise StructureError("interaction constraints have not been derived")
        return StructuredPrecision(
            matrix=self.precision,
            rank_deficiency=self.nullity,
            constraints=self.constraints,
            rhs=np.zeros(self.constraints.shape[0]),
            null_basis=self.null_basis,
        )


def kronecker_precision(
    q_period: StructuredPrecision,
    q_space: StructuredPrecision,
    max_size: int = DEFAULT_MAX_SIZE,
    derive_constraints: bool = True,
    tol: float = RANK_TOLERANCE,
) -> InteractionBlock:
    """``Q_period (x) Q_space`` with nullity ``PS - rank(Q_p) rank(Q_s)``."""
    n_periods, n_regions = q_period.dim, q_space.dim
    size = n_periods * n_regions
    if size > max_size:
        raise ModelAssemblyError(
            f"space-period interaction has {size} entries, above the limit of {max_size}"
        )
    rank = (n_periods - q_period.rank_deficiency) * (n_regions - q_space.rank_deficiency)
    basis_blocks = []
    if q_period.n_constraints:
        basis_blocks.append(sp.kron(sp.csr_matrix(q_period.constraints.T), sp.identity(n_regions)))
    if q_space.n_constraints:
        basis_blocks.append(sp.kron(sp.identity(n_periods), sp.csr_matrix(q_space.constraints.T)))
    null_basis = sp.hstack(basis_blocks, format="csr") if basis_blocks else sp.csr_matrix((size, 0))
    block = InteractionBlock(
        precision=sp.csr_matrix(sp.kron(q_period.matrix, q_space.matrix)),
        n_periods=n_periods,
        n_regions=n_regions,
        nullity=size - rank,
        null_basis=null_basis,
    )
    if derive_constraints:
        constraints = null_space_constraints(block, tol) if block.nullity else np.zeros((0, size))
        block = replace(block, constraints=constraints)
    logger.debug("interaction %dx%d: nullity %d", n_periods, n_regions, block.nullity)
    return block


def null_space_constraints(block: InteractionBlock, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Orthonormal eigenvectors of the zero eigenvalues, one per row."""
    eigenvalues, vectors = symmetric_eigh(block.precision)
    mask = zero_eigen_mask(eigenvalues, tol)
    found = int(mask.sum())
    if found != block.nullity:
        raise StructureError(
            f"interaction precision has {found} eigenvalues below {tol:g} x max, expected {block.nullity}"
        )
    return vectors[:, mask].T.copy()
