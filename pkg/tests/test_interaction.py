import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from u5mr_apc.errors import ModelAssemblyError, StructureError
from u5mr_apc.interaction import kronecker_precision, null_space_constraints
from u5mr_apc.spatial import AdjacencyGraph, icar_precision, scale_icar
from u5mr_apc.structure import check_rank, symmetric_eigh, zero_eigen_mask
from u5mr_apc.temporal import TemporalAxis, rw2_precision


@pytest.fixture
def pair():
    return AdjacencyGraph.from_mapping({"A": ["B"], "B": ["A"]})


def test_small_interaction_nullity(pair):
    q_p = rw2_precision(TemporalAxis.years("period", 2010, 2012), scale=True)
    q_s = scale_icar(icar_precision(pair), pair)
    block = kronecker_precision(q_p, q_s)
    assert block.dim == 6
    assert block.nullity == 5
    assert block.constraints.shape == (5, 6)
    check_rank(block.structure())


def test_region_runs_fastest(square4):
    q_p = rw2_precision(TemporalAxis.years("period", 2010, 2013))
    q_s = icar_precision(square4)
    block = kronecker_precision(q_p, q_s)
    assert block.index(np.array([0, 1, 3]), np.array([0, 2, 3])).tolist() == [0, 6, 15]
    dense = block.precision.toarray()
    assert dense[1, 5] == q_p.dense()[0, 1] * q_s.dense()[1, 1]


def test_kenya_sized_interaction(kenya_like_graph):
    q_s = scale_icar(icar_precision(kenya_like_graph), kenya_like_graph)
    q_p = rw2_precision(TemporalAxis.years("period", 2006, 2013), scale=True)
    block = kronecker_precision(q_p, q_s)
    assert block.dim == 376
    assert block.nullity == 376 - 6 * 46
    constraints = block.constraints
    assert np.allclose(constraints @ constraints.T, np.eye(block.nullity), atol=1e-8)
    assert np.abs(block.precision @ constraints.T).max() < 1e-8


def test_null_basis_spans_same_space(square4):
    q_p = rw2_precision(TemporalAxis.years("period", 2010, 2014))
    q_s = icar_precision(square4)
    block = kronecker_precision(q_p, q_s)
    basis = block.null_basis.toarray()
    assert np.abs(block.precision @ basis).max() < 1e-10
    assert np.linalg.matrix_rank(basis) == block.nullity
    projection = block.constraints.T @ block.constraints
    assert np.allclose(projection @ basis, basis, atol=1e-8)


def test_size_limit(kenya_like_graph):
    q_s = icar_precision(kenya_like_graph)
    q_p = rw2_precision(TemporalAxis.years("period", 1990, 2100))
    with pytest.raises(ModelAssemblyError):
        kronecker_precision(q_p, q_s)


def test_tolerance_mismatch(pair):
    q_p = rw2_precision(TemporalAxis.years("period", 2010, 2013))
    q_s = icar_precision(pair)
    block = kronecker_precision(q_p, q_s, derive_constraints=False)
    assert block.constraints is None
    with pytest.raises(StructureError):
        block.structure()
    with pytest.raises(StructureError):
        null_space_constraints(block, tol=0.5)


def cliques(n_regions, n_components):
    """``n_components`` complete graphs covering ``n_regions`` regions."""
    groups = np.array_split(np.arange(n_regions), n_components)
    return AdjacencyGraph.from_mapping({
        f"R{i}": [f"R{j}" for j in group if j != i] for group in groups for i in group
    })


def expected_nullity(n_periods, n_regions, n_components):
    return n_periods * n_regions - (n_periods - 2) * (n_regions - n_components)


def test_nullity_on_every_shape_up_to_600():
    periods, spaces = {}, {}
    for p in range(3, 301):
        q_p = periods.setdefault(p, rw2_precision(TemporalAxis.years("period", 2000, 1999 + p)))
        ev_p = symmetric_eigh(q_p.matrix)[0] if p <= 100 else None
        for s in range(2, 600 // p + 1):
            for c in (1, 2) if s >= 4 else (1,):
                if (s, c) not in spaces:
                    q_s = icar_precision(cliques(s, c))
                    spaces[s, c] = (q_s, symmetric_eigh(q_s.matrix)[0])
                q_s, ev_s = spaces[s, c]
                block = kronecker_precision(q_p, q_s, derive_constraints=False)
                nullity = expected_nullity(p, s, c)
                assert block.nullity == nullity
                assert abs(block.precision @ block.null_basis).max() < 1e-8
                if ev_p is not None:
                    # the spectrum of a Kronecker product is the outer product of the spectra
                    assert zero_eigen_mask(np.outer(ev_p, ev_s).ravel()).sum() == nullity


@settings(deadline=None, max_examples=25)
@given(st.integers(min_value=3, max_value=40), st.data())
def test_derived_constraints_match_nullity(n_periods, data):
    n_regions = data.draw(st.integers(min_value=2, max_value=600 // n_periods))
    n_components = data.draw(st.integers(min_value=1, max_value=max(1, n_regions // 2)))
    q_p = rw2_precision(TemporalAxis.years("period", 2000, 1999 + n_periods), scale=True)
    q_s = icar_precision(cliques(n_regions, n_components))
    block = kronecker_precision(q_p, q_s)
    assert block.nullity == expected_nullity(n_periods, n_regions, n_components)
    assert block.constraints.shape == (block.nullity, n_periods * n_regions)
    assert np.abs(block.precision @ block.constraints.T).max() < 1e-8
