"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``BDSDE_RMC_NUMBA=0`` to force
the numpy implementations (useful for debugging or when numba is absent).
Both backends are exposed under explicit names (``np_*`` / ``nb_*``) so the
benchmark and the tests can compare them directly.

Kernels
-------
philox4x32
    Philox4x32-10 counter-based block cipher (Salmon et al. 2011).
counter_normals
    Standard normals as a pure function of ``(seed, m, k, tag)``.
gram_accumulate, sparse_rmatvec, sparse_matvec
    Products involving a row-sparse design stored as ``(cols, vals)`` with a
    fixed number of stored entries per row.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    nb = None
    HAVE_NUMBA = False

_flag = os.environ.get("BDSDE_RMC_NUMBA", "1").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
PHILOX_ROUNDS = 10

_MASK32 = np.uint64(0xFFFFFFFF)
_TWO_POW_M53 = 2.0**-53
_TWO_PI = 2.0 * np.pi

# rows per chunk in the numpy gram fallback (bounds the q*q temporary)
_GRAM_CHUNK = 1 << 18


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def np_philox4x32(c0, c1, c2, c3, k0, k1):
    """Vectorised Philox4x32-10. Inputs are 32-bit words held in uint64."""
    c0 = np.asarray(c0, dtype=np.uint64) & _MASK32
    c1 = np.asarray(c1, dtype=np.uint64) & _MASK32
    c2 = np.asarray(c2, dtype=np.uint64) & _MASK32
    c3 = np.asarray(c3, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(int(k0) & 0xFFFFFFFF)
    k1 = np.uint64(int(k1) & 0xFFFFFFFF)
    m0 = np.uint64(PHILOX_M0)
    m1 = np.uint64(PHILOX_M1)
    shift = np.uint64(32)
    for r in range(PHILOX_ROUNDS):
        p0 = c0 * m0
        p1 = c2 * m1
        n0 = (p1 >> shift) ^ c1 ^ k0
        n2 = (p0 >> shift) ^ c3 ^ k1
        c1 = p1 & _MASK32
        c3 = p0 & _MASK32
        c0 = n0
        c2 = n2
        if r < PHILOX_ROUNDS - 1:
            k0 = np.uint64((int(k0) + PHILOX_W0) & 0xFFFFFFFF)
            k1 = np.uint64((int(k1) + PHILOX_W1) & 0xFFFFFFFF)
    return c0, c1, c2, c3


def _words_to_normal(w0, w1, w2, w3):
    a = (w0 >> np.uint64(5)).astype(np.float64) * 67108864.0
    b = (w1 >> np.uint64(6)).astype(np.float64)
    u1 = (a + b + 0.5) * _TWO_POW_M53
    a = (w2 >> np.uint64(5)).astype(np.float64) * 67108864.0
    b = (w3 >> np.uint64(6)).astype(np.float64)
    u2 = (a + b + 0.5) * _TWO_POW_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def np_counter_normals(seed, m, k, tag):
    """One N(0,1) draw per counter ``(m, k, tag, 0)`` under key ``seed``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    m = np.asarray(m, dtype=np.uint64)
    k = np.asarray(k, dtype=np.uint64)
    m, k = np.broadcast_arrays(m, k)
    w = np_philox4x32(m, k, np.uint64(tag), np.uint64(0), seed & 0xFFFFFFFF, seed >> 32)
    return _words_to_normal(*w)


def np_gram_accumulate(cols, vals, n, weights=None):
    """Dense ``sum_m w_m v_m v_m^T`` for row-sparse ``v`` (not normalised)."""
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    rows, q = cols.shape
    out = np.zeros(n * n)
    step = max(1, _GRAM_CHUNK // max(q * q, 1))
    for s in range(0, rows, step):
        c = cols[s : s + step]
        v = vals[s : s + step]
        prod = v[:, :, None] * v[:, None, :]
        if weights is not None:
            prod = prod * np.asarray(weights[s : s + step])[:, None, None]
        idx = c[:, :, None] * n + c[:, None, :]
        out += np.bincount(idx.ravel(), weights=prod.ravel(), minlength=n * n)
    return out.reshape(n, n)


def np_sparse_rmatvec(cols, vals, x, n, weights=None):
    """``sum_m w_m x_m v_m`` for row-sparse ``v``."""
    vals = np.asarray(vals, dtype=np.float64)
    s = np.asarray(x, dtype=np.float64)
    if weights is not None:
        s = s * np.asarray(weights, dtype=np.float64)
    scaled = vals * s[:, None]
    return np.bincount(np.asarray(cols).ravel(), weights=scaled.ravel(), minlength=n)


def np_sparse_matvec(cols, vals, theta):
    """Row-wise ``theta . v_m``."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.einsum("mq,mq->m", theta[cols], vals)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @nb.njit(cache=True)
    def _nb_philox_scalar(c0, c1, c2, c3, k0, k1):
        mask = np.uint64(0xFFFFFFFF)
        m0 = np.uint64(PHILOX_M0)
        m1 = np.uint64(PHILOX_M1)
        w0 = np.uint64(PHILOX_W0)
        w1 = np.uint64(PHILOX_W1)
        sh = np.uint64(32)
        for r in range(PHILOX_ROUNDS):
            p0 = c0 * m0
            p1 = c2 * m1
            n0 = (p1 >> sh) ^ c1 ^ k0
            n2 = (p0 >> sh) ^ c3 ^ k1
            c1 = p1 & mask
            c3 = p0 & mask
            c0 = n0
            c2 = n2
            k0 = (k0 + w0) & mask
            k1 = (k1 + w1) & mask
        return c0, c1, c2, c3

    @nb.njit(cache=True)
    def _nb_philox_arrays(c0, c1, c2, c3, k0, k1):
        n = c0.size
        o0 = np.empty(n, np.uint64)
        o1 = np.empty(n, np.uint64)
        o2 = np.empty(n, np.uint64)
        o3 = np.empty(n, np.uint64)
        for i in range(n):
            a, b, c, d = _nb_philox_scalar(c0[i], c1[i], c2[i], c3[i], k0, k1)
            o0[i] = a
            o1[i] = b
            o2[i] = c
            o3[i] = d
        return o0, o1, o2, o3

    @nb.njit(cache=True)
    def _nb_gram(cols, vals, n, weights, use_w):
        out = np.zeros((n, n))
        rows, q = cols.shape
        for m in range(rows):
            w = weights[m] if use_w else 1.0
            for a in range(q):
                ca = cols[m, a]
                va = vals[m, a]
                for b in range(q):
                    out[ca, cols[m, b]] += va * vals[m, b] * w
        return out

    @nb.njit(cache=True)
    def _nb_rmatvec(cols, vals, x, n, weights, use_w):
        out = np.zeros(n)
        rows, q = cols.shape
        for m in range(rows):
            s = x[m] * weights[m] if use_w else x[m]
            for a in range(q):
                out[cols[m, a]] += vals[m, a] * s
        return out

    @nb.njit(cache=True)
    def _nb_matvec(cols, vals, theta):
        rows, q = cols.shape
        out = np.zeros(rows)
        for m in range(rows):
            acc = 0.0
            for a in range(q):
                acc += theta[cols[m, a]] * vals[m, a]
            out[m] = acc
        return out


def nb_philox4x32(c0, c1, c2, c3, k0, k1):
    arrs = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3)))
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a).ravel() for a in arrs]
    out = _nb_philox_arrays(*flat, np.uint64(int(k0) & 0xFFFFFFFF), np.uint64(int(k1) & 0xFFFFFFFF))
    return tuple(o.reshape(shape) for o in out)


def nb_counter_normals(seed, m, k, tag):
    # the cipher runs in numba; log/cos stay in numpy so both backends agree bitwise
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    m, k = np.broadcast_arrays(np.asarray(m, dtype=np.uint64), np.asarray(k, dtype=np.uint64))
    shape = m.shape
    flat_m = np.ascontiguousarray(m).ravel()
    words = _nb_philox_arrays(
        flat_m,
        np.ascontiguousarray(k).ravel(),
        np.full(flat_m.size, tag, dtype=np.uint64),
        np.zeros(flat_m.size, dtype=np.uint64),
        np.uint64(seed & 0xFFFFFFFF),
        np.uint64(seed >> 32),
    )
    return _words_to_normal(*words).reshape(shape)


def _weights_arg(weights, rows):
    if weights is None:
        return np.ones(1), False
    return np.ascontiguousarray(weights, dtype=np.float64), True


def nb_gram_accumulate(cols, vals, n, weights=None):
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    w, use = _weights_arg(weights, cols.shape[0])
    return _nb_gram(cols, vals, int(n), w, use)


def nb_sparse_rmatvec(cols, vals, x, n, weights=None):
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    w, use = _weights_arg(weights, cols.shape[0])
    return _nb_rmatvec(cols, vals, np.ascontiguousarray(x, dtype=np.float64), int(n), w, use)


def nb_sparse_matvec(cols, vals, theta):
    return _nb_matvec(
        np.ascontiguousarray(cols, dtype=np.int64),
        np.ascontiguousarray(vals, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
    )


if USE_NUMBA:
    philox4x32 = nb_philox4x32
    counter_normals = nb_counter_normals
    gram_accumulate = nb_gram_accumulate
    sparse_rmatvec = nb_sparse_rmatvec
    sparse_matvec = nb_sparse_matvec
else:
    philox4x32 = np_philox4x32
    counter_normals = np_counter_normals
    gram_accumulate = np_gram_accumulate
    sparse_rmatvec = np_sparse_rmatvec
    sparse_matvec = np_sparse_matvec


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
