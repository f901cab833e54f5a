"""Time grid and reproducible simulation of Brownian increments and Euler paths."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, SimulationError
from .model import ProblemSpec

# stream tags of the counter-based generator
TAG_W = 0
TAG_B = 1
TAG_PILOT_W = 2
TAG_PILOT_B = 3

STREAMS = {"main": (TAG_W, TAG_B), "pilot": (TAG_PILOT_W, TAG_PILOT_B)}


@dataclass(frozen=True)
class TimeGrid:
    N: int
    T: float

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h


def build_time_grid(T: float, N: int) -> TimeGrid:
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ConfigurationError(f"number of time steps must be a positive integer, got {N!r}")
    if not (T > 0 and np.isfinite(T)):
        raise ConfigurationError(f"horizon must be positive, got {T!r}")
    return TimeGrid(int(N), float(T))


@dataclass(frozen=True, eq=False)
class PathBatch:
    """M simulated paths. ``dW[m, k]`` is the increment over [t_k, t_{k+1}]
    (Delta W_{k+1} in step notation); ``dB[m, k]`` is Delta B_k; ``X[m, k]`` is the
    Euler state at t_k."""

    dW: np.ndarray
    dB: np.ndarray
    X: np.ndarray
    seed: int
    grid: TimeGrid
    stream: str = "main"
    path_offset: int = 0

    @property
    def M(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N


def gaussian_increments(seed: int, m: np.ndarray, N: int, tag: int, h: float) -> np.ndarray:
    """N(0, h) increments, entry (m, k) a pure function of (seed, m, k, tag)."""
    mm = np.asarray(m, dtype=np.uint64)[:, None]
    kk = np.arange(N, dtype=np.uint64)[None, :]
    return np.sqrt(h) * _kernels.counter_normals(seed, mm, kk, tag)


def euler_paths(spec: ProblemSpec, h: float, dW: np.ndarray, first_path: int = 0) -> np.ndarray:
    M, N = dW.shape
    X = np.empty((M, N + 1))
    X[:, 0] = spec.x0
    for k in range(N):
        x = X[:, k]
        X[:, k + 1] = x + h * spec.drift(x) + spec.diffusion(x) * dW[:, k]
        bad = ~np.isfinite(X[:, k + 1])
        if bad.any():
            m = int(np.flatnonzero(bad)[0]) + first_path
            raise SimulationError(f"non-finite Euler state at path m={m}, step k={k + 1}")
    return X


def simulate_paths(
    spec: ProblemSpec,
    grid: TimeGrid,
    M: int,
    seed: int,
    *,
    stream: str = "main",
    path_offset: int = 0,
    workers: int = 1,
    chunk: int = 1 << 16,
) -> PathBatch:
    """Simulate paths ``path_offset .. path_offset+M-1`` of the stream.

    Output does not depend on ``workers`` or ``chunk``: every increment is
    derived from its own counter.
    """
    if M < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {M}")
    tag_w, tag_b = STREAMS[stream]
    h = grid.h
    starts = list(range(0, M, chunk))

    def part(s):
        m = np.arange(path_offset + s, path_offset + min(s + chunk, M), dtype=np.uint64)
        dw = gaussian_increments(seed, m, grid.N, tag_w, h)
        db = gaussian_increments(seed, m, grid.N, tag_b, h)
        return dw, db, euler_paths(spec, h, dw, first_path=path_offset + s)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(part, starts))
    else:
        parts = [part(s) for s in starts]
    dW = np.concatenate([p[0] for p in parts])
    dB = np.concatenate([p[1] for p in parts])
    X = np.concatenate([p[2] for p in parts])
    return PathBatch(dW, dB, X, int(seed), grid, stream, int(path_offset))


def simulate_states(spec: ProblemSpec, grid: TimeGrid, M: int, seed: int, *, stream: str = "pilot") -> np.ndarray:
    """Euler states only (no backward increments); used for partition pilots."""
    tag_w = STREAMS[stream][0]
    out = []
    for s in range(0, M, 1 << 16):
        m = np.arange(s, min(s + (1 << 16), M), dtype=np.uint64)
        out.append(euler_paths(spec, grid.h, gaussian_increments(seed, m, grid.N, tag_w, grid.h), s))
    return np.concatenate(out)


def write_paths_csv(batch: PathBatch, path) -> None:
    """Dump ``m,k,t,dW,dB,X`` rows; increments at k=N are left empty."""
    t = batch.grid.t
    N = batch.N
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "k", "t", "dW", "dB", "X"])
        for m in range(batch.M):
            for k in range(N + 1):
                if k < N:
                    w.writerow([m + batch.path_offset, k, float(t[k]), float(batch.dW[m, k]), float(batch.dB[m, k]), float(batch.X[m, k])])
                else:
                    w.writerow([m + batch.path_offset, k, float(t[k]), "", "", float(batch.X[m, k])])
