"""Region adjacency, ICAR structures and the BYM2 spatial block."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .errors import GraphError, ParameterError, StructureError
from .structure import (
    RANK_TOLERANCE,
    StructuredPrecision,
    generalized_variances,
    scale_to_unit_variance,
    symmetric_eigh,
    zero_eigen_mask,
)

logger = logging.getLogger(__name__)

__all__ = [
    "AdjacencyGraph",
    "Bym2Block",
    "StructuredPrecision",
    "adjacency_from_polygons",
    "bym2_block",
    "delaunay_graph",
    "icar_precision",
    "read_adjacency",
    "scale_icar",
    "scaled_eigenvalues",
    "write_adjacency",
]


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected region graph; ``neighbors[i]`` holds indices into ``regions``."""

    regions: tuple[str, ...]
    neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.regions) != len(self.neighbors):
            raise GraphError("one neighbor list is required per region")
        if len(set(self.regions)) != len(self.regions):
            raise GraphError("duplicate region ids")
        n = len(self.regions)
        for i, nbrs in enumerate(self.neighbors):
            for j in nbrs:
                if not 0 <= j < n:
                    raise GraphError(f"neighbor index {j} out of range for region {self.regions[i]}")
                if j == i:
                    raise GraphError(f"region {self.regions[i]} lists itself as a neighbor")
                if i not in self.neighbors[j]:
                    raise GraphError(
                        f"asymmetric adjacency: {self.regions[i]} lists {self.regions[j]} but not vice versa"
                    )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "AdjacencyGraph":
        regions = tuple(mapping)
        index = {r: i for i, r in enumerate(regions)}
        neighbors = []
        for region in regions:
            try:
                nbrs = sorted({index[str(n)] for n in mapping[region]})
            except KeyError as exc:
                raise GraphError(f"region {region} has unknown neighbor {exc.args[0]}") from None
            neighbors.append(tuple(nbrs))
        return cls(regions, tuple(neighbors))

    @property
    def size(self) -> int:
        return len(self.regions)

    def index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.regions)}

    def adjacency_matrix(self) -> sp.csr_matrix:
        rows = [i for i, nbrs in enumerate(self.neighbors) for _ in nbrs]
        cols = [j for nbrs in self.neighbors for j in nbrs]
        n = self.size
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=float)

    def components(self) -> np.ndarray:
        """Connected-component label per region."""
        _, labels = connected_components(self.adjacency_matrix(), directed=False)
        return labels

    def component_members(self) -> list[np.ndarray]:
        labels = self.components()
        return [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]


def icar_precision(graph: AdjacencyGraph) -> StructuredPrecision:
    """Q = D - W with one sum-to-zero constraint per connected component."""
    if graph.size == 0:
        raise GraphError("cannot build an ICAR structure on an empty graph")
    matrix = sp.diags(graph.degrees()) - graph.adjacency_matrix()
    members = graph.component_members()
    constraints = np.zeros((len(members), graph.size))
    for row, idx in enumerate(members):
        constraints[row, idx] = 1.0
    return StructuredPrecision(
        matrix=sp.csr_matrix(matrix),
        rank_deficiency=len(members),
        constraints=constraints,
        rhs=np.zeros(len(members)),
    )


def scale_icar(q: StructuredPrecision, graph: Optional[AdjacencyGraph] = None) -> StructuredPrecision:
    """Scale every non-singleton component to unit generalized variance.

    Components are taken from ``graph`` when supplied, otherwise from the
    sparsity pattern of ``q``.  Singleton components (islands) are skipped by
    the scaling and receive a unit-variance iid structure instead, with their
    sum-to-zero constraint dropped, so an island's BYM2 effect is purely
    unstructured.
    """
    if graph is not None:
        groups = graph.component_members()
    else:
        pattern = sp.csr_matrix(q.matrix, copy=True)
        pattern.setdiag(0)
        pattern.eliminate_zeros()
        _, labels = connected_components(pattern, directed=False)
        groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    if all(len(g) < 2 for g in groups):
        raise StructureError("ICAR structure has no component with more than one region to scale")
    scaled = scale_to_unit_variance(q, groups)
    diagonal = scaled.matrix.diagonal()
    islands = [int(g[0]) for g in groups if len(g) == 1 and diagonal[g[0]] == 0.0]
    if not islands:
        return scaled
    matrix = scaled.matrix.tolil()
    for i in islands:
        matrix[i, i] = 1.0
    keep = [row for row in scaled.constraints if not (np.count_nonzero(row) == 1 and np.flatnonzero(row)[0] in islands)]
    constraints = np.vstack(keep)
    return StructuredPrecision(
        matrix=matrix.tocsr(),
        rank_deficiency=scaled.rank_deficiency - len(islands),
        constraints=constraints,
        rhs=np.zeros(constraints.shape[0]),
    )


def scaled_eigenvalues(scaled: StructuredPrecision, tol: float = RANK_TOLERANCE) -> np.ndarray:
    """Non-zero eigenvalues of a scaled structure (input of the mixing PC prior)."""
    eigenvalues, _ = symmetric_eigh(scaled.matrix)
    return eigenvalues[~zero_eigen_mask(eigenvalues, tol)]


@dataclass(frozen=True)
class Bym2Block:
    """BYM2 effect in its augmented (S, u*) form.

    S = (sqrt(1 - phi) v + sqrt(phi) u*) / sqrt(tau) with v white noise and u*
    the scaled ICAR field; the latent vector is the concatenation (S, u*).
    """

    tau: float
    phi: float
    scaled: StructuredPrecision

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ParameterError(f"BYM2 precision must be positive, got {self.tau}")
        if not (0.0 <= self.phi <= 1.0):
            raise ParameterError(f"BYM2 mixing must lie in [0, 1], got {self.phi}")

    @property
    def n_regions(self) -> int:
        return self.scaled.dim

    def precision(self) -> sp.csr_matrix:
        """Joint precision of (S, u*); singular at phi = 1 where S is a
        deterministic function of u*."""
        if self.phi >= 1.0:
            raise ParameterError("the joint (S, u*) precision does not exist at phi = 1")
        n = self.n_regions
        eye = sp.identity(n, format="csr")
        a = self.tau / (1.0 - self.phi)
        b = math.sqrt(self.phi * self.tau) / (1.0 - self.phi)
        c = self.phi / (1.0 - self.phi)
        return sp.csr_matrix(sp.bmat([[a * eye, -b * eye], [-b * eye, self.scaled.matrix + c * eye]]))

    def constraints(self) -> np.ndarray:
        """Sum-to-zero rows on the structured half u*."""
        k = self.scaled.n_constraints
        return np.hstack([np.zeros((k, self.n_regions)), self.scaled.constraints])

    def structure(self) -> StructuredPrecision:
        return StructuredPrecision(
            matrix=self.precision(),
            rank_deficiency=self.scaled.rank_deficiency,
            constraints=self.constraints(),
            rhs=np.zeros(self.scaled.n_constraints),
        )

    def marginal_covariance(self) -> np.ndarray:
        """Covariance of S: ((1 - phi) I + phi Q*^+) / tau."""
        eigenvalues, vectors = symmetric_eigh(self.scaled.matrix)
        keep = ~zero_eigen_mask(eigenvalues)
        pinv = (vectors[:, keep] / eigenvalues[keep]) @ vectors[:, keep].T
        return ((1.0 - self.phi) * np.eye(self.n_regions) + self.phi * pinv) / self.tau

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draws of S with shape (size, n_regions)."""
        eigenvalues, vectors = symmetric_eigh(self.scaled.matrix)
        keep = ~zero_eigen_mask(eigenvalues)
        structured = (rng.standard_normal((size, int(keep.sum()))) / np.sqrt(eigenvalues[keep])) @ vectors[:, keep].T
        noise = rng.standard_normal((size, self.n_regions))
        return (math.sqrt(1.0 - self.phi) * noise + math.sqrt(self.phi) * structured) / math.sqrt(self.tau)


def bym2_block(tau_S: float, phi: float, scaled: StructuredPrecision) -> Bym2Block:
    return Bym2Block(tau=float(tau_S), phi=float(phi), scaled=scaled)


def marginal_variance_geomean(scaled: StructuredPrecision) -> float:
    return float(np.exp(np.mean(np.log(generalized_variances(scaled.matrix)))))


# ---------------------------------------------------------------------------
# Adjacency I/O

def read_adjacency(path) -> AdjacencyGraph:
    """Read ``region_id: neighbor,neighbor`` lines; blank lines and ``#`` comments are ignored."""
    mapping: dict[str, list[str]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise GraphError(f"{path}:{lineno}: expected 'region: neighbors'")
        region, rest = line.split(":", 1)
        region = region.strip()
        if region in mapping:
            raise GraphError(f"{path}:{lineno}: region {region} listed twice")
        mapping[region] = [n.strip() for n in rest.split(",") if n.strip()]
    graph = AdjacencyGraph.from_mapping(mapping)
    logger.info("read adjacency for %d regions from %s", graph.size, path)
    return graph


def write_adjacency(graph: AdjacencyGraph, path) -> None:
    lines = [
        f"{region}: {','.join(graph.regions[j] for j in nbrs)}"
        for region, nbrs in zip(graph.regions, graph.neighbors)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def adjacency_from_polygons(polygons: Mapping[str, Sequence[Sequence[float]]], decimals: int = 9) -> AdjacencyGraph:
    """Regions are neighbors when their boundaries share at least one edge."""
    owners: dict[tuple, set[str]] = {}
    for region, ring in polygons.items():
        pts = [tuple(np.round(np.asarray(p, dtype=float), decimals)) for p in ring]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        for a, b in zip(pts, pts[1:] + pts[:1]):
            owners.setdefault(tuple(sorted((a, b))), set()).add(region)
    mapping: dict[str, set[str]] = {r: set() for r in polygons}
    for regions in owners.values():
        for r in regions:
            mapping[r].update(regions - {r})
    return AdjacencyGraph.from_mapping({r: sorted(n) for r, n in mapping.items()})


def read_polygons(path) -> AdjacencyGraph:
    with open(path, "r") as f:
        polygons = json.load(f)
    return adjacency_from_polygons(polygons)


def delaunay_graph(points: np.ndarray, region_ids: Sequence[str]) -> AdjacencyGraph:
    """Connected planar graph from the Delaunay triangulation of region centroids."""
    points = np.asarray(points, dtype=float)
    if len(points) != len(region_ids):
        raise GraphError("one point is required per region")
    if len(points) < 3:
        mapping = {r: [o for o in region_ids if o != r] for r in region_ids}
        return AdjacencyGraph.from_mapping(mapping)
    tri = Delaunay(points)
    neighbors: dict[int, set[int]] = {i: set() for i in range(len(points))}
    for simplex in tri.simplices:
        for a in simplex:
            for b in simplex:
                if a != b:
                    neighbors[int(a)].add(int(b))
    return AdjacencyGraph.from_mapping(
        {region_ids[i]: [region_ids[j] for j in sorted(n)] for i, n in neighbors.items()}
    )
