"""Regression Monte Carlo solver: terminal projection, backward induction with
Picard iterations, truncation, and out-of-sample evaluation."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .basis import BasisSystem, SparseRows, eval_p, eval_v
from .errors import ConfigurationError, NumericalError
from .grid_paths import PathBatch, TimeGrid, simulate_paths
from .model import ProblemSpec
from .regression import LeastSquaresDesign, LocalizationReport, localization_from_design, operator_norm_minus_identity
from .truncation import NO_TRUNCATION, TruncationProfile, make_truncation

PICARD_MODES = ("refit", "freeze")


@dataclass
class ThetaCoefficients:
    alpha: list  # alpha_k for k = 0..N
    beta: list  # beta_k for k = 0..N, beta_N = 0
    picard_norms: list = field(default_factory=list)  # per k: |theta^i| for i = 1..I
    picard_diffs: list = field(default_factory=list)  # per k: |theta^i - theta^{i-1}|

    @property
    def N(self) -> int:
        return len(self.alpha) - 1


def picard_ratios(diffs) -> list:
    """Successive ratios d_{i+1}/d_i; 0/0 counts as 0."""
    out = []
    for a, b in zip(diffs[:-1], diffs[1:]):
        out.append(0.0 if b == 0 else (b / a if a > 0 else math.inf))
    return out


@dataclass
class SolveReport:
    theta: ThetaCoefficients
    Y: np.ndarray  # (M, N+1) truncated Y on the training batch
    Z: np.ndarray  # (M, N) truncated Z
    localization: list  # LocalizationReport per k; entry N only checks P_N
    event_flags: np.ndarray  # A^M_k = all event_ok for j = k..N-1
    truncation: TruncationProfile
    basis: BasisSystem
    grid: TimeGrid
    I: int
    picard_beta: str
    terminal_std: float
    runtimes: dict = field(default_factory=dict)

    @property
    def y0_pathwise(self) -> np.ndarray:
        return self.Y[:, 0]

    @property
    def y0_mean(self) -> float:
        return float(np.mean(self.Y[:, 0]))

    @property
    def y0_std(self) -> float:
        return float(np.std(self.Y[:, 0]))

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    def picard_ratios(self, k: int) -> list:
        return picard_ratios(self.theta.picard_diffs[k])

    def summary(self) -> dict:
        return {
            "y0_mean": self.y0_mean,
            "y0_std": self.y0_std,
            "terminal_std": self.terminal_std,
            "M": self.M,
            "N": self.grid.N,
            "I": self.I,
            "C0": self.truncation.C0 if self.truncation.active else None,
            "C0_mode": self.truncation.mode,
            "picard_beta": self.picard_beta,
            "event_ok_all": bool(self.event_flags[0]),
            "backend": _kernels.backend(),
            "runtimes": dict(self.runtimes),
        }


def _values(p: SparseRows, coef: np.ndarray) -> np.ndarray:
    return _kernels.sparse_matvec(p.cols, p.vals, coef)


def truncated_step(p: SparseRows, alpha, beta, trunc: TruncationProfile, h: float):
    """Truncated (Y, Z) at one time index; Z is None when beta is None."""
    rho = trunc.levels(p)
    y = trunc.truncate_y(_values(p, alpha), rho)
    z = None if beta is None else trunc.truncate_z(_values(p, beta), rho, h)
    return y, z


def project_terminal(batch: PathBatch, basis: BasisSystem, spec: ProblemSpec):
    """Regress Phi(X_N) on p_N; returns (alpha_N, p_N, design)."""
    N = basis.N
    p = eval_p(basis, N, batch.X[:, N], batch.dB)
    design = LeastSquaresDesign(p)
    target = np.asarray(spec.terminal(batch.X[:, N]), dtype=float) * np.ones(batch.M)
    return design.solve(target), p, design


def picard_iterate(spec, k, design: LeastSquaresDesign, p: SparseRows, X_k, base, alpha_prev, beta_prev, h):
    """One Picard pass at step k.

    ``base`` is the part of the target that does not depend on the iterate,
    ``Yhat_{k+1} + dB_k g(X_{k+1}, Yhat_{k+1})``. Returns ``(alpha, beta)``.
    """
    D = p.dim
    target = base + h * np.asarray(spec.driver(X_k, _values(p, alpha_prev), _values(p, beta_prev)), dtype=float)
    theta = design.solve(target)
    return theta[:D].copy(), theta[D:] / math.sqrt(h)


def check_step_size(spec: ProblemSpec, h: float) -> None:
    if h * h * spec.lipschitz_f >= 1:
        raise ConfigurationError(f"h^2 L_f = {h * h * spec.lipschitz_f:.4g} >= 1: the implicit step is not well posed; increase N")


def backward_solve(
    spec: ProblemSpec,
    grid: TimeGrid,
    basis: BasisSystem,
    batch: PathBatch,
    I: int,
    truncation: TruncationProfile = NO_TRUNCATION,
    picard_beta: str = "refit",
) -> SolveReport:
    """Run the full backward induction on ``batch``."""
    if I < 1:
        raise ConfigurationError(f"Picard count I must be >= 1, got {I}")
    if picard_beta not in PICARD_MODES:
        raise ConfigurationError(f"picard_beta must be one of {PICARD_MODES}, got {picard_beta!r}")
    if basis.N != grid.N or batch.N != grid.N:
        raise ConfigurationError("basis, batch and grid disagree on N")
    check_step_size(spec, grid.h)
    N, h, M = grid.N, grid.h, batch.M
    sqh = math.sqrt(h)
    if M < 2 * max(basis.dims):
        warnings.warn(f"M={M} is below 2*max D_k={2 * max(basis.dims)}: Gram matrices are singular, using pseudo-solves", stacklevel=2)

    timers = {"basis": 0.0, "regression": 0.0, "truncation": 0.0}
    t0 = time.perf_counter()
    X, dW, dB = batch.X, batch.dW, batch.dB
    Y = np.empty((M, N + 1))
    Z = np.empty((M, N))
    alphas = [None] * (N + 1)
    betas = [None] * (N + 1)
    norms = [[] for _ in range(N + 1)]
    diffs = [[] for _ in range(N + 1)]
    loc = [None] * (N + 1)

    alpha_N, p, design = project_terminal(batch, basis, spec)
    nP, lamP, bounded = operator_norm_minus_identity(design.V)
    loc[N] = LocalizationReport(float("nan"), nP, lamP, True, bounded)
    alphas[N], betas[N] = alpha_N, np.zeros(basis.dim(N))
    Y[:, N], _ = truncated_step(p, alpha_N, None, truncation, h)
    terminal = np.asarray(spec.terminal(X[:, N]), dtype=float) * np.ones(M)
    timers["regression"] += time.perf_counter() - t0

    for k in range(N - 1, -1, -1):
        t1 = time.perf_counter()
        p = eval_p(basis, k, X[:, k], dB)
        v = eval_v(p, dW[:, k], h)
        design = LeastSquaresDesign(v)
        D = p.dim
        loc[k] = localization_from_design(design, design.V[:D, :D], h)
        t2 = time.perf_counter()
        y_next = Y[:, k + 1]
        base = y_next + dB[:, k] * np.asarray(spec.backward_driver(X[:, k + 1], y_next), dtype=float)
        a_prev, b_prev = np.zeros(D), np.zeros(D)
        b_frozen = None
        for i in range(1, I + 1):
            a, b = picard_iterate(spec, k, design, p, X[:, k], base, a_prev, b_prev if b_frozen is None else b_frozen, h)
            if picard_beta == "freeze":
                if b_frozen is None:
                    b_frozen = b
                b = b_frozen
            th = np.concatenate([a, sqh * b])
            norms[k].append(float(np.linalg.norm(th)))
            diffs[k].append(float(np.linalg.norm(th - np.concatenate([a_prev, sqh * b_prev]))))
            a_prev, b_prev = a, b
        alphas[k], betas[k] = a_prev, b_prev
        t3 = time.perf_counter()
        Y[:, k], Z[:, k] = truncated_step(p, a_prev, b_prev, truncation, h)
        if not (np.all(np.isfinite(Y[:, k])) and np.all(np.isfinite(Z[:, k]))):
            raise NumericalError(f"non-finite solution values at step k={k}")
        timers["basis"] += t2 - t1
        timers["regression"] += t3 - t2
        timers["truncation"] += time.perf_counter() - t3

    ok = np.array([r.event_ok for r in loc[:N]] + [True])
    flags = np.flip(np.logical_and.accumulate(np.flip(ok)))
    timers["total"] = time.perf_counter() - t0
    return SolveReport(
        theta=ThetaCoefficients(alphas, betas, norms, diffs),
        Y=Y,
        Z=Z,
        localization=loc,
        event_flags=flags,
        truncation=truncation,
        basis=basis,
        grid=grid,
        I=I,
        picard_beta=picard_beta,
        terminal_std=float(np.std(terminal)),
        runtimes={key: round(val, 6) for key, val in timers.items()},
    )


def evaluate_solution(report: SolveReport, batch: PathBatch, basis: BasisSystem | None = None):
    """Apply stored coefficients and truncation to another batch; returns (Y, Z)."""
    basis = report.basis if basis is None else basis
    if not basis.same_partitions(report.basis) or batch.N != report.grid.N:
        raise ConfigurationError("evaluation basis differs from the one used to solve")
    N, h = report.grid.N, report.grid.h
    Y = np.empty((batch.M, N + 1))
    Z = np.empty((batch.M, N))
    for k in range(N + 1):
        p = eval_p(basis, k, batch.X[:, k], batch.dB)
        beta = report.theta.beta[k] if k < N else None
        y, z = truncated_step(p, report.theta.alpha[k], beta, report.truncation, h)
        Y[:, k] = y
        if k < N:
            Z[:, k] = z
    return Y, Z


def pilot_truncation(spec, grid, basis, I, seed, pilot_M, *, safety=4.0, picard_beta="refit") -> TruncationProfile:
    """C0 from an untruncated solve on the pilot stream."""
    batch = simulate_paths(spec, grid, pilot_M, seed, stream="pilot")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            rep = backward_solve(spec, grid, basis, batch, I, NO_TRUNCATION, picard_beta)
        except NumericalError as exc:
            raise NumericalError(f"pilot solve diverged ({exc}); set a fixed C0 instead") from exc
    moments = np.mean(rep.Y**2, axis=0)
    moments[:-1] += grid.h * np.mean(rep.Z**2, axis=0)
    return make_truncation("pilot", safety=safety, pilot_moments=moments)


def write_report_csv(report: SolveReport, path) -> None:
    t = report.grid.t
    N = report.grid.N
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "|alpha|", "|beta|", "norm_V", "norm_P", "event_ok", "picard_last_ratio"])
        for k in range(N + 1):
            r = report.localization[k]
            ratios = report.picard_ratios(k) if k < N else []
            w.writerow([
                k,
                float(t[k]),
                float(np.linalg.norm(report.theta.alpha[k])),
                float(np.linalg.norm(report.theta.beta[k])),
                r.norm_V,
                r.norm_P,
                int(bool(report.event_flags[k])),
                ratios[-1] if ratios else float("nan"),
            ])


def write_diagnostics_csv(report: SolveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "norm_V", "norm_P", "lambda_min", "event_ok"])
        for k, r in enumerate(report.localization):
            w.writerow([k, r.norm_V, r.norm_P, r.lambda_min, int(r.event_ok)])


def write_summary_json(report: SolveReport, path, extra: dict | None = None) -> None:
    data = report.summary()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
