import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdsde_rmc import _kernels as K

# published Philox4x32-10 known-answer vectors
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0), (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers_numpy(ctr, key, expected):
    out = K.np_philox4x32(*ctr, *key)
    assert tuple(int(w) for w in out) == expected


@needs_numba
@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers_numba(ctr, key, expected):
    out = K.nb_philox4x32(*(np.array([c]) for c in ctr), *key)
    assert tuple(int(w[0]) for w in out) == expected


@needs_numba
def test_normals_identical_across_backends():
    m = np.arange(5000, dtype=np.uint64)[:, None]
    k = np.arange(4, dtype=np.uint64)[None, :]
    a = K.np_counter_normals(123, m, k, 1)
    b = K.nb_counter_normals(123, m, k, 1)
    assert np.array_equal(a, b)


def test_normals_moments():
    z = K.counter_normals(5, np.arange(200_000, dtype=np.uint64), np.uint64(0), 0)
    assert abs(z.mean()) < 4 / np.sqrt(len(z))
    assert abs(z.var() - 1) < 0.02
    assert np.all(np.isfinite(z))


def test_normals_depend_on_every_counter_field():
    base = K.counter_normals(1, np.uint64(3), np.uint64(2), 0)
    assert base != K.counter_normals(2, np.uint64(3), np.uint64(2), 0)
    assert base != K.counter_normals(1, np.uint64(4), np.uint64(2), 0)
    assert base != K.counter_normals(1, np.uint64(3), np.uint64(1), 0)
    assert base != K.counter_normals(1, np.uint64(3), np.uint64(2), 1)


def _rows(draw_seed, M, q, n):
    rng = np.random.default_rng(draw_seed)
    return rng.integers(0, n, size=(M, q)), rng.normal(size=(M, q)), rng.random(M)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 4), st.integers(1, 9))
def test_numpy_kernels_match_dense(seed, M, q, n):
    cols, vals, w = _rows(seed, M, q, n)
    dense = np.zeros((M, n))
    np.add.at(dense, (np.arange(M)[:, None], cols), vals)
    x = np.random.default_rng(seed + 1).normal(size=M)
    theta = np.random.default_rng(seed + 2).normal(size=n)
    assert np.allclose(K.np_gram_accumulate(cols, vals, n), dense.T @ dense)
    assert np.allclose(K.np_gram_accumulate(cols, vals, n, w), dense.T @ (w[:, None] * dense))
    assert np.allclose(K.np_sparse_rmatvec(cols, vals, x, n), dense.T @ x)
    assert np.allclose(K.np_sparse_rmatvec(cols, vals, x, n, w), dense.T @ (w * x))
    assert np.allclose(K.np_sparse_matvec(cols, vals, theta), dense @ theta)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 4), st.integers(1, 9))
def test_backends_agree(seed, M, q, n):
    cols, vals, w = _rows(seed, M, q, n)
    x = np.random.default_rng(seed + 1).normal(size=M)
    theta = np.random.default_rng(seed + 2).normal(size=n)
    assert np.allclose(K.nb_gram_accumulate(cols, vals, n, w), K.np_gram_accumulate(cols, vals, n, w), rtol=1e-12, atol=1e-12)
    assert np.allclose(K.nb_sparse_rmatvec(cols, vals, x, n), K.np_sparse_rmatvec(cols, vals, x, n), rtol=1e-12, atol=1e-12)
    assert np.allclose(K.nb_sparse_matvec(cols, vals, theta), K.np_sparse_matvec(cols, vals, theta), rtol=1e-12, atol=1e-12)


def test_gram_is_exactly_symmetric():
    cols, vals, _ = _rows(3, 1000, 4, 12)
    G = K.gram_accumulate(cols, vals, 12)
    assert np.array_equal(G, G.T)
