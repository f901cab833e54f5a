"""Indicator function bases.

For each time index k the basis vector p_k is made of blocks:

* the base block ``u_i(X_k)``, one normalised indicator per state cell;
* for l = N-1 down to k, the block
  ``u_{i_N}(X_k) * prod_{r=l+1}^{N-1} v_{i_r}(dB_r) * dB_l / sqrt(h)``
  indexed by ``(i_N, i_{N-1}, ..., i_{l+1})`` in row-major order.

Each block has exactly one active index per sample, so the basis is stored
row-sparse: one ``(col, val)`` pair per block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from .errors import ConfigurationError
from .grid_paths import TimeGrid, simulate_states
from .model import ProblemSpec

DEFAULT_DIM_CAP = 20000


@dataclass(frozen=True, eq=False)
class Partition1D:
    kind: str
    edges: np.ndarray
    probs: np.ndarray

    @property
    def L(self) -> int:
        return len(self.probs)

    @property
    def norm(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.probs)

    def cell(self, x) -> np.ndarray:
        """Index of the cell ``[e_i, e_{i+1})`` containing each x."""
        return np.searchsorted(self.edges[1:-1], x, side="right")

    def u(self, x) -> np.ndarray:
        """Dense evaluation of all normalised indicators, shape (..., L)."""
        x = np.asarray(x, dtype=float)
        return np.eye(self.L)[self.cell(x)] * self.norm


def gaussian_partition(L: int, h: float) -> Partition1D:
    """Equal-probability cells of N(0, h)."""
    if L < 1:
        raise ConfigurationError("number of cells must be >= 1")
    inner = np.sqrt(h) * _normal.ppf(np.arange(1, L) / L)
    edges = np.concatenate(([-np.inf], inner, [np.inf]))
    return Partition1D("gaussian", edges, np.full(L, 1.0 / L))


def state_partition(sample: np.ndarray, L: int, warn: bool = True) -> Partition1D:
    """Empirical-quantile cells with cell frequencies as probabilities.

    Repeated quantiles (an atom in the pilot law) are merged and empty cells
    removed, with a warning.
    """
    sample = np.asarray(sample, dtype=float)
    inner = np.unique(np.quantile(sample, np.arange(1, L) / L))
    collapsed = len(inner) < L - 1
    while True:
        edges = np.concatenate(([-np.inf], inner, [np.inf]))
        counts = np.bincount(np.searchsorted(inner, sample, side="right"), minlength=len(inner) + 1)
        empty = np.flatnonzero(counts == 0)
        if len(empty) == 0:
            break
        collapsed = True
        # drop the edge bounding the first empty cell
        i = int(empty[0])
        inner = np.delete(inner, min(i, len(inner) - 1))
    if collapsed and warn:
        warnings.warn(f"state partition collapsed from {L} to {len(counts)} cells (atom in pilot sample)", stacklevel=2)
    return Partition1D("state", edges, counts / counts.sum())


def build_partitions(spec: ProblemSpec, grid: TimeGrid, L: int, pilot_size: int, seed: int):
    """State partitions for k = 0..N from a pilot batch, and the N(0, h) partition.

    The pilot uses its own random stream, independent of any regression batch
    drawn with the same seed.
    """
    if L < 1:
        raise ConfigurationError(f"L must be >= 1, got {L}")
    if pilot_size < 50 * L:
        raise ConfigurationError(f"pilot_size must be >= 50*L = {50 * L}, got {pilot_size}")
    X = simulate_states(spec, grid, pilot_size, seed, stream="pilot")
    states = [state_partition(X[:, k], L, warn=False) for k in range(grid.N + 1)]
    # k = 0 is always a point mass at x0; only report unexpected collapses
    collapsed = [k for k, p in enumerate(states) if p.L < L and k > 0]
    if collapsed:
        warnings.warn(f"state partitions collapsed at k={collapsed} (point masses in the pilot)", stacklevel=2)
    return states, gaussian_partition(L, grid.h)


@dataclass(frozen=True)
class Block:
    l: int  # l == N denotes the base block
    offset: int
    size: int


@dataclass(frozen=True, eq=False)
class BasisSystem:
    N: int
    L: int
    depth_cap: int
    h: float
    state_partitions: tuple
    db_partition: Partition1D
    layout: tuple = field(repr=False)
    dims: tuple = ()

    def blocks(self, k: int) -> tuple:
        return self.layout[k]

    def dim(self, k: int) -> int:
        return self.dims[k]

    def same_partitions(self, other: "BasisSystem") -> bool:
        if other is self:
            return True
        if (self.N, self.L, self.depth_cap) != (other.N, other.L, other.depth_cap) or self.h != other.h:
            return False
        pairs = list(zip(self.state_partitions, other.state_partitions)) + [(self.db_partition, other.db_partition)]
        return all(np.array_equal(a.edges, b.edges) and np.array_equal(a.probs, b.probs) for a, b in pairs)


def assemble_basis(state_partitions, db_partition: Partition1D, N: int, h: float, depth_cap: int | None = None, dim_cap: int = DEFAULT_DIM_CAP) -> BasisSystem:
    """Lay out the blocks of p_k for every k and check the size cap."""
    d = N if depth_cap is None else int(depth_cap)
    if not 1 <= d <= N:
        raise ConfigurationError(f"depth_cap must be in [1, N={N}], got {depth_cap}")
    if len(state_partitions) != N + 1:
        raise ConfigurationError("need one state partition per time index 0..N")
    L = db_partition.L
    layout, dims = [], []
    for k in range(N + 1):
        Ls = state_partitions[k].L
        blocks = [Block(N, 0, Ls)]
        off = Ls
        for l in range(N - 1, k - 1, -1):
            if N - l > d:
                break
            size = Ls * L ** (N - l - 1)
            blocks.append(Block(l, off, size))
            off += size
        if 2 * off > dim_cap:
            raise ConfigurationError(f"basis dimension at k={k} is {off} (regression size {2 * off}) above the cap {dim_cap}; lower depth_cap or L")
        layout.append(tuple(blocks))
        dims.append(off)
    return BasisSystem(N, L, d, float(h), tuple(state_partitions), db_partition, tuple(layout), tuple(dims))


def build_basis(spec: ProblemSpec, grid: TimeGrid, L: int, pilot_size: int, seed: int, depth_cap: int | None = None, dim_cap: int = DEFAULT_DIM_CAP) -> BasisSystem:
    states, gauss = build_partitions(spec, grid, L, pilot_size, seed)
    return assemble_basis(states, gauss, grid.N, grid.h, depth_cap, dim_cap)


@dataclass(frozen=True)
class SparseRows:
    """Row-sparse sample matrix: row m is ``sum_q vals[m, q] e_{cols[m, q]}``."""

    cols: np.ndarray
    vals: np.ndarray
    dim: int

    @property
    def M(self) -> int:
        return self.cols.shape[0]

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("mq,mq->m", self.vals, self.vals))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.M, self.dim))
        np.add.at(out, (np.arange(self.M)[:, None], self.cols), self.vals)
        return out


def eval_p(sys: BasisSystem, k: int, x: np.ndarray, dB: np.ndarray) -> SparseRows:
    """p_k on samples. ``x`` is X_{t_k} (M,), ``dB`` the full (M, N) increments."""
    x = np.asarray(x, dtype=float)
    M = x.shape[0]
    part = sys.state_partitions[k]
    blocks = sys.layout[k]
    cols = np.empty((M, len(blocks)), dtype=np.int64)
    vals = np.empty((M, len(blocks)))
    idx = part.cell(x)
    fac = part.norm[idx]
    cols[:, 0] = idx
    vals[:, 0] = fac
    gnorm = sys.db_partition.norm
    sqh = np.sqrt(sys.h)
    for q, blk in enumerate(blocks[1:], start=1):
        l = blk.l
        # running (idx, fac) already include v_{i_r}(dB_r) for r = l+1 .. N-1
        cols[:, q] = blk.offset + idx
        vals[:, q] = fac * dB[:, l] / sqh
        c = sys.db_partition.cell(dB[:, l])
        idx = idx * sys.L + c
        fac = fac * gnorm[c]
    return SparseRows(cols, vals, sys.dims[k])


def eval_v(p: SparseRows, dw_next: np.ndarray, h: float) -> SparseRows:
    """v_k = (p_k, p_k dW_{k+1} / sqrt(h))."""
    scale = np.asarray(dw_next, dtype=float)[:, None] / np.sqrt(h)
    return SparseRows(np.concatenate([p.cols, p.cols + p.dim], axis=1), np.concatenate([p.vals, p.vals * scale], axis=1), 2 * p.dim)


def eval_basis_vector(sys: BasisSystem, k: int, x: float, db, dw_next: float | None = None, h: float | None = None):
    """Dense p_k (and v_k when ``dw_next`` is given) at a single sample.

    ``db`` lists dB_j for j = k..N-1.
    """
    h = sys.h if h is None else h
    db = np.asarray(db, dtype=float).reshape(-1)
    if db.size != sys.N - k:
        raise ConfigurationError(f"expected {sys.N - k} backward increments for k={k}, got {db.size}")
    row = np.zeros((1, sys.N))
    row[0, k:] = db
    p = eval_p(sys, k, np.array([x], dtype=float), row)
    pd = p.dense()[0]
    if dw_next is None:
        return pd, None
    if k >= sys.N:
        raise ConfigurationError("v_k needs dW_{k+1}; undefined at k = N")
    return pd, eval_v(p, np.array([dw_next]), h).dense()[0]


def basis_info_rows(sys: BasisSystem):
    """Rows ``(k, D_k, blocks, nnz_per_sample)`` for the basis-info table."""
    return [(k, sys.dims[k], len(sys.layout[k]), len(sys.layout[k])) for k in range(sys.N + 1)]
