import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsde_rmc.basis import (
    assemble_basis,
    basis_info_rows,
    build_basis,
    build_partitions,
    eval_basis_vector,
    eval_p,
    eval_v,
    gaussian_partition,
    state_partition,
)
from bdsde_rmc.errors import ConfigurationError
from bdsde_rmc.grid_paths import build_time_grid, simulate_paths
from bdsde_rmc.regression import gram_matrix

from conftest import zero_problem


def full_dim(L, N, k):
    return L + sum(L**m for m in range(1, N - k + 1))


def gaussian_system(N, L, h=1.0, depth=None):
    g = gaussian_partition(L, h)
    return assemble_basis([g] * (N + 1), g, N, h, depth)


def test_gaussian_partitions():
    p = gaussian_partition(2, 1.0)
    assert list(p.edges) == [-np.inf, 0.0, np.inf]
    assert np.all(p.probs == 0.5) and np.allclose(p.norm, np.sqrt(2))
    p = gaussian_partition(4, 1.0)
    # standard normal quartiles
    assert np.allclose(p.edges[1:-1], [-0.6744897501960817, 0.0, 0.6744897501960817], atol=1e-12)
    assert np.all(p.probs == 0.25) and np.all(p.norm == 2.0)


def test_point_mass_collapses_to_single_cell():
    spec = zero_problem()
    spec = spec.__class__(**{**spec.__dict__, "diffusion": lambda x: np.zeros(np.shape(x))})
    with pytest.warns(UserWarning, match="collapsed"):
        states, _ = build_partitions(spec, build_time_grid(1.0, 2), 4, 1000, 1)
    for p in states:
        assert p.L == 1 and p.probs[0] == 1.0 and p.norm[0] == 1.0


def test_pilot_size_precondition():
    with pytest.raises(ConfigurationError):
        build_partitions(zero_problem(), build_time_grid(1.0, 2), 4, 100, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 1000), st.integers(60, 600))
def test_state_partition_invariants(L, seed, n):
    rng = np.random.default_rng(seed)
    sample = np.round(rng.normal(size=n), 1)  # ties on purpose
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = state_partition(sample, L)
    assert 1 <= p.L <= L
    assert np.all(np.diff(p.edges) > 0)
    assert np.all(p.probs > 0) and abs(p.probs.sum() - 1) <= 1e-12
    x = rng.normal(size=200) * 3
    # partition of unity
    assert np.allclose(p.u(x) @ np.sqrt(p.probs), 1.0, atol=1e-15)


def test_dimensions_full_depth_and_cap():
    sys = gaussian_system(3, 2)
    assert [b.size for b in sys.blocks(1)] == [2, 2, 4] and sys.dim(1) == 8
    assert sys.dim(0) == 16
    for L in (2, 3):
        s = gaussian_system(3, L)
        assert all(s.dim(k) == full_dim(L, 3, k) for k in range(4))
    capped = gaussian_system(3, 2, depth=1)
    assert [b.size for b in capped.blocks(0)] == [2, 2] and capped.dim(0) == 4
    with pytest.raises(ConfigurationError, match="depth_cap"):
        assemble_basis([gaussian_partition(10, 1)] * 6, gaussian_partition(10, 1), 5, 1.0)


def test_basis_info_rows():
    rows = basis_info_rows(gaussian_system(3, 2))
    assert rows[0] == (0, 16, 4, 4) and rows[3] == (3, 2, 1, 1)


def test_eval_basis_vector_examples():
    sys = gaussian_system(2, 2, h=1.0)
    # x in cell 1, dB_1 = 0.5
    p, v = eval_basis_vector(sys, 1, 0.3, [0.5], dw_next=0.2)
    assert np.allclose(p, [0, np.sqrt(2), 0, np.sqrt(2) * 0.5])
    assert np.allclose(v, np.concatenate([p, p * 0.2]))
    p4 = gaussian_system(1, 4)
    base, _ = eval_basis_vector(p4, 1, 0.0, [])
    assert np.allclose(base, [0, 0, 2.0, 0])
    p, _ = eval_basis_vector(gaussian_system(3, 3), 0, 0.1, [0.0, 0.0, 0.0])
    assert np.count_nonzero(p) == 1


def test_block_indexing_is_row_major():
    sys = gaussian_system(3, 2, h=1.0)
    # k=0 block l=0 is indexed by (i_N, i_2, i_1); pick x<0, dB_2>0, dB_1<0
    p, _ = eval_basis_vector(sys, 0, -1.0, [0.7, -0.4, 0.9])
    blk = [b for b in sys.blocks(0) if b.l == 0][0]
    idx = (0 * 2 + 1) * 2 + 0
    assert p[blk.offset + idx] == pytest.approx(np.sqrt(2) ** 3 * 0.7)
    assert np.count_nonzero(p[blk.offset : blk.offset + blk.size]) == 1


def test_sparsity_and_dense_agree(small_batch):
    spec_sys = gaussian_system(3, 3, h=small_batch.grid.h)
    for k in range(4):
        p = eval_p(spec_sys, k, small_batch.X[:, k], small_batch.dB)
        assert p.cols.shape[1] == 4 - k
        d = p.dense()
        assert np.all((d != 0).sum(axis=1) <= 4 - k)
        m = 7
        single, _ = eval_basis_vector(spec_sys, k, small_batch.X[m, k], small_batch.dB[m, k:])
        assert np.array_equal(d[m], single)


def test_orthonormality_law_of_large_numbers(martingale):
    spec, _ = martingale
    grid = build_time_grid(1.0, 2)
    sys = build_basis(spec, grid, 2, 100_000, 3)
    M = 100_000
    b = simulate_paths(spec, grid, M, 8)
    for k in range(3):
        p = eval_p(sys, k, b.X[:, k], b.dB)
        D = p.dim
        assert np.linalg.norm(gram_matrix(p) - np.eye(D)) <= 5 * D / np.sqrt(M)
        if k < 2:
            v = eval_v(p, b.dW[:, k], grid.h)
            assert np.linalg.norm(gram_matrix(v) - np.eye(2 * D)) <= 5 * 2 * D / np.sqrt(M)


def test_same_partitions():
    a = gaussian_system(2, 2)
    b = gaussian_system(2, 2)
    c = gaussian_system(2, 3)
    assert a.same_partitions(b) and not a.same_partitions(c)
