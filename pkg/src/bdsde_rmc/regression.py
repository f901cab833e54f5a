"""Empirical least squares on row-sparse designs.

The normal matrix ``V = (1/M) sum_m v_m v_m^T`` is symmetric; it is split into
independent diagonal blocks (connected components of its sparsity pattern,
typically one per state cell) and each block is diagonalised once. The same
factorisation then serves every regression target at that time step, the
minimum-norm pseudo-solve and the localisation diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .basis import SparseRows
from .errors import ConfigurationError, NumericalError

RANK_RTOL = 1e-12


def as_sparse_rows(v) -> SparseRows:
    if isinstance(v, SparseRows):
        return v
    v = np.atleast_2d(np.asarray(v, dtype=float))
    M, n = v.shape
    return SparseRows(np.broadcast_to(np.arange(n), (M, n)).copy(), v.copy(), n)


@dataclass
class GramPair:
    V: np.ndarray
    P: np.ndarray


def gram_matrix(rows, weights=None) -> np.ndarray:
    """(1/M) sum v v^T, or sum w v v^T when weights (summing to one) are given."""
    r = as_sparse_rows(rows)
    G = _kernels.gram_accumulate(r.cols, r.vals, r.dim, weights)
    if weights is None:
        G /= r.M
    # entries are accumulated in the same order for (a, b) and (b, a)
    return G


def gram_matrices(v, p) -> GramPair:
    v, p = as_sparse_rows(v), as_sparse_rows(p)
    if v.M != p.M:
        raise ConfigurationError(f"sample count mismatch: v has {v.M} rows, p has {p.M}")
    return GramPair(gram_matrix(v), gram_matrix(p))


@dataclass
class LocalizationReport:
    norm_V: float
    norm_P: float
    lambda_min: float
    event_ok: bool
    bounded: bool = False  # True when the norms are Frobenius upper bounds


def _components(G: np.ndarray):
    n = G.shape[0]
    ncomp, labels = connected_components(scipy.sparse.csr_matrix(G != 0), directed=False)
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, splits) if n else []


def block_eigh(G: np.ndarray, vectors: bool = True):
    """Eigen-decomposition of a symmetric matrix block by block.

    Returns ``(eigvals, blocks)`` where ``blocks`` is a list of
    ``(index, w, Q)`` per connected component.
    """
    comps = _components(G)
    blocks, all_w = [], []
    for idx in comps:
        sub = G[np.ix_(idx, idx)]
        if vectors:
            w, Q = scipy.linalg.eigh(sub, check_finite=False)
        else:
            w, Q = scipy.linalg.eigh(sub, eigvals_only=True, check_finite=False), None
        blocks.append((idx, w, Q))
        all_w.append(w)
    w = np.concatenate(all_w) if all_w else np.zeros(0)
    return np.sort(w), blocks


def operator_norm_minus_identity(G: np.ndarray):
    """``max |eig(G) - 1|`` and ``lambda_min(G)``; Frobenius fallback on failure."""
    try:
        w, _ = block_eigh(G, vectors=False)
        return float(np.max(np.abs(w - 1.0))), float(w[0]), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        D = G - np.eye(G.shape[0])
        return float(np.linalg.norm(D, "fro")), float("nan"), True


class LeastSquaresDesign:
    """A factorised regression design ``v`` (M rows) reusable across targets."""

    def __init__(self, v, weights=None):
        self.rows = as_sparse_rows(v)
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self.M = self.rows.M
        self.n = self.rows.dim
        self.V = gram_matrix(self.rows, self.weights)
        self.failed = False
        try:
            self.eigvals, self._blocks = block_eigh(self.V)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            self.failed = True
            self.eigvals = np.full(self.n, np.nan)
            self._blocks = []
        scale = float(np.max(np.abs(self.eigvals))) if self.n and not self.failed else 0.0
        self.rank_tol = RANK_RTOL * scale
        self.rank = int(np.sum(self.eigvals > self.rank_tol)) if not self.failed else -1

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[0]) if self.n else float("nan")

    def rhs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bad = ~np.isfinite(x)
        if bad.any():
            raise NumericalError(f"non-finite regression target at sample m={int(np.flatnonzero(bad)[0])}")
        b = _kernels.sparse_rmatvec(self.rows.cols, self.rows.vals, x, self.n, self.weights)
        return b / self.M if self.weights is None else b

    def solve(self, x: np.ndarray) -> np.ndarray:
        """Minimum-norm minimiser of ``|x - theta . v|_M^2``."""
        b = self.rhs(x)
        if self.failed:
            return self._solve_fallback(b)
        theta = np.zeros(self.n)
        for idx, w, Q in self._blocks:
            keep = w > self.rank_tol
            if not keep.any():
                continue
            Qk = Q[:, keep]
            theta[idx] = Qk @ ((Qk.T @ b[idx]) / w[keep])
        return theta

    def _solve_fallback(self, b):
        sol, *_ = scipy.linalg.lstsq(self.V, b, cond=RANK_RTOL, lapack_driver="gelsd")
        return sol

    def predict(self, theta: np.ndarray) -> np.ndarray:
        return _kernels.sparse_matvec(self.rows.cols, self.rows.vals, theta)

    def diagnostics(self, x: np.ndarray, theta: np.ndarray) -> dict:
        b = self.rhs(x)
        fit = self.predict(theta)
        if self.weights is None:
            fit_sq, x_sq = float(np.mean(fit**2)), float(np.mean(np.asarray(x) ** 2))
        else:
            fit_sq, x_sq = float(self.weights @ fit**2), float(self.weights @ np.asarray(x) ** 2)
        return {
            "lambda_min": self.lambda_min,
            "rank": self.rank,
            "orthogonality": float(np.max(np.abs(b - self.V @ theta))) if self.n else 0.0,
            "fitted_sq": fit_sq,
            "target_sq": x_sq,
        }


def solve_least_squares(v, x, weights=None):
    """Regress targets ``x`` (M,) on sample vectors ``v`` (M x n, dense or sparse).

    Returns ``(theta, diagnostics)``; theta is the minimum-norm minimiser,
    equal to ``V^{-1} (1/M) sum x_m v_m`` whenever V is invertible.
    """
    design = LeastSquaresDesign(v, weights)
    x = np.asarray(x, dtype=float)
    if x.shape != (design.M,):
        raise ConfigurationError(f"targets must have shape ({design.M},), got {x.shape}")
    theta = design.solve(x)
    return theta, design.diagnostics(x, theta)


def localization_check(gram: GramPair, h: float) -> LocalizationReport:
    nv, lam, bv = operator_norm_minus_identity(gram.V)
    nP, _, bp = operator_norm_minus_identity(gram.P)
    return LocalizationReport(nv, nP, lam, bool(nv <= h and nP <= h), bv or bp)


def localization_from_design(design: LeastSquaresDesign, P: np.ndarray, h: float) -> LocalizationReport:
    """Same as :func:`localization_check` reusing the eigenvalues of a factorised V."""
    if design.failed:
        return localization_check(GramPair(design.V, P), h)
    nv = float(np.max(np.abs(design.eigvals - 1.0)))
    nP, _, bp = operator_norm_minus_identity(P)
    return LocalizationReport(nv, nP, design.lambda_min, bool(nv <= h and nP <= h), bp)
