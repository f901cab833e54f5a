"""Pipeline runs, error metrics, convergence sweeps and rate fitting."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..basis import BasisSystem, build_basis
from ..errors import ConfigurationError
from ..grid_paths import PathBatch, TimeGrid, build_time_grid, simulate_paths
from ..model import validate_problem
from ..oracle import closed_form_discrete, ideal_projection_theta, quadrature_scheme
from ..solver import SolveReport, backward_solve, evaluate_solution, pilot_truncation
from ..truncation import make_truncation
from .config import RunConfig

log = logging.getLogger(__name__)

CONVERGENCE_HEADER = ["case", "axis", "level", "replicate", "seed", "N", "h", "L", "M", "I", "errY", "errZ", "p_event_ok", "runtime_ms"]
ORACLE_HEADER = ["case", "N", "L", "M", "metric", "value", "reference", "abs_err", "rel_err"]

# held-out paths are taken far along the main stream of the same seed
HOLDOUT_OFFSET = 1 << 40


def thread_count() -> int:
    cap = os.environ.get("BDSDE_RMC_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigurationError(f"BDSDE_RMC_THREADS must be an integer, got {cap!r}") from exc
    return n


@dataclass
class Run:
    cfg: RunConfig
    spec: object
    case: object
    grid: TimeGrid
    basis: BasisSystem
    batch: PathBatch
    report: SolveReport


def setup(cfg: RunConfig, *, seed: int | None = None, audit: bool = False):
    """Problem, grid and basis for a config (partitions depend on the seed only)."""
    seed = cfg.seed if seed is None else seed
    spec, case = cfg.build_problem()
    if audit:
        rep = validate_problem(spec)
        if not rep.passed:
            log.warning("declared Lipschitz constants fail the sampled audit (f ratio %.4g, g ratio %.4g)", rep.worst_ratio_f, rep.worst_ratio_g)
    grid = build_time_grid(spec.T, cfg.N)
    depth = cfg.depth_cap if cfg.depth_cap is not None else cfg.N
    if depth > cfg.N:
        raise ConfigurationError(f"depth_cap={depth} exceeds N={cfg.N}")
    basis = build_basis(spec, grid, cfg.L, max(cfg.pilot_size, 50 * cfg.L), seed, depth)
    return spec, case, grid, basis


def truncation_for(cfg: RunConfig, spec, grid, basis, seed: int):
    if cfg.C0["mode"] == "fixed":
        return make_truncation("fixed", value=cfg.C0["value"])
    return pilot_truncation(spec, grid, basis, cfg.I, seed, cfg.M, safety=cfg.C0.get("safety", 4.0), picard_beta=cfg.picard_beta)


def run_solve(cfg: RunConfig, *, seed: int | None = None, basis: BasisSystem | None = None, workers: int = 1, audit: bool = False) -> Run:
    seed = cfg.seed if seed is None else seed
    t0 = time.perf_counter()
    if basis is None:
        spec, case, grid, b = setup(cfg, seed=seed, audit=audit)
    else:
        spec, case = cfg.build_problem()
        grid, b = build_time_grid(spec.T, cfg.N), basis
    t1 = time.perf_counter()
    trunc = truncation_for(cfg, spec, grid, b, seed)
    t2 = time.perf_counter()
    batch = simulate_paths(spec, grid, cfg.M, seed, workers=workers)
    t3 = time.perf_counter()
    report = backward_solve(spec, grid, b, batch, cfg.I, trunc, cfg.picard_beta)
    report.runtimes.update({"partitions": round(t1 - t0, 6), "C0": round(t2 - t1, 6), "simulate": round(t3 - t2, 6)})
    return Run(cfg, spec, case, grid, b, batch, report)


def oracle_values(spec, case, batch: PathBatch, n_nodes: int = 20):
    """Exact discrete (Y, Z) on the batch: closed form when available, else quadrature."""
    if case is not None:
        return closed_form_discrete(case, batch)
    N = batch.N
    if N > 3:
        raise ConfigurationError("no oracle for custom problems beyond N = 3")
    q = quadrature_scheme(spec, batch.grid, n_nodes)
    Y = np.empty((batch.M, N + 1))
    Z = np.empty((batch.M, N))
    for k in range(N + 1):
        y, z = q.evaluate(k, batch.X[:, k], batch.dB[:, k:])
        Y[:, k] = y
        if k < N:
            Z[:, k] = z
    return Y, Z


def error_metrics(Y, Z, Yref, Zref, h: float) -> dict:
    dy2 = (Y - Yref) ** 2
    dz2 = (Z - Zref) ** 2
    return {
        "errY": float(np.max(np.mean(dy2, axis=0))),
        "errZ": float(h * np.sum(np.mean(dz2, axis=0))),
        "rmseY": float(np.sqrt(np.mean(dy2))),
        "rmseZ": float(np.sqrt(np.mean(dz2))) if dz2.size else 0.0,
    }


def holdout_batch(run: Run, M: int | None = None, seed: int | None = None) -> PathBatch:
    M = M or run.cfg.holdout_M or run.cfg.M
    seed = run.batch.seed if seed is None else seed
    return simulate_paths(run.spec, run.grid, M, seed, path_offset=HOLDOUT_OFFSET)


def heldout_errors(run: Run, holdout: PathBatch | None = None) -> dict:
    holdout = holdout_batch(run) if holdout is None else holdout
    Y, Z = evaluate_solution(run.report, holdout, run.basis)
    Yr, Zr = oracle_values(run.spec, run.case, holdout)
    return error_metrics(Y, Z, Yr, Zr, run.grid.h)


def _level_config(cfg: RunConfig, axis: str, level: int) -> RunConfig:
    if axis not in ("N", "M", "L"):
        raise ConfigurationError(f"sweep axis must be N, M or L, got {axis!r}")
    changes = {axis: int(level)}
    if axis == "N" and cfg.depth_cap is not None and cfg.depth_cap > level:
        changes["depth_cap"] = int(level)
    return cfg.replace(**changes)


def convergence_row(cfg: RunConfig, axis: str, level: int, replicate: int) -> dict:
    lc = _level_config(cfg, axis, level)
    seed = cfg.seed + replicate
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = run_solve(lc, seed=seed)
        err = heldout_errors(run)
    return {
        "case": cfg.case_tag or cfg.problem.get("factory"),
        "axis": axis,
        "level": int(level),
        "replicate": replicate,
        "seed": seed,
        "N": lc.N,
        "h": run.grid.h,
        "L": lc.L,
        "M": lc.M,
        "I": lc.I,
        "errY": err["errY"],
        "errZ": err["errZ"],
        "p_event_ok": float(run.report.event_flags[0]),
        "runtime_ms": round(1000 * (time.perf_counter() - t0), 3),
    }


def run_convergence(cfg: RunConfig, axis: str | None = None, levels=None, replicates: int | None = None, *, workers: int | None = None) -> list:
    """One row per (level, replicate); replicate r uses seed ``cfg.seed + r``.

    Within a replicate every level shares the seed, so M-levels see nested
    training batches and identical held-out paths.
    """
    sweep = cfg.sweep or {}
    axis = axis or sweep.get("axis")
    levels = list(levels if levels is not None else sweep.get("levels", []))
    replicates = replicates or sweep.get("replicates", 1)
    if not axis or not levels:
        raise ConfigurationError("convergence needs a sweep axis and levels")
    pairs = list(zip(levels, levels[1:]))
    if not (all(b > a for a, b in pairs) or all(b < a for a, b in pairs)):
        raise ConfigurationError("sweep levels must be strictly monotone")
    tasks = [(lv, r) for lv in levels for r in range(replicates)]
    workers = thread_count() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda t: convergence_row(cfg, axis, *t), tasks))
    else:
        rows = [convergence_row(cfg, axis, *t) for t in tasks]
    rows.sort(key=lambda r: (levels.index(r["level"]), r["replicate"]))
    return rows


def write_rows(rows, header, path, append: bool = False) -> None:
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        if not exists:
            w.writeheader()
        for r in rows:
            w.writerow(r)


def level_means(rows, x_column: str, y_column: str):
    levels = sorted({r[x_column] for r in rows})
    means = [float(np.mean([r[y_column] for r in rows if r[x_column] == lv])) for lv in levels]
    return np.array(levels, dtype=float), np.array(means)


def fit_loglog_slope(rows, x_column: str = "level", y_column: str = "errY"):
    """OLS slope of log(mean y per level) on log x, with its standard error.

    Fewer than two levels gives NaN slope; two levels give NaN stderr.
    """
    x, y = level_means(rows, x_column, y_column)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError(f"log-log fit needs positive values in {x_column!r} and {y_column!r}")
    if len(x) < 2:
        return math.nan, math.nan
    if len(x) == 2:
        return float(np.diff(np.log(y))[0] / np.diff(np.log(x))[0]), math.nan
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


def oracle_check(cfg: RunConfig, tag: str | None = None) -> list:
    """Compare a pipeline run with the oracles; one row per metric."""
    if tag is not None:
        cfg = cfg.with_case(tag)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        run = run_solve(cfg)
    hold = holdout_batch(run)
    Y, Z = evaluate_solution(run.report, hold, run.basis)
    Yr, Zr = oracle_values(run.spec, run.case, hold)
    err = error_metrics(Y, Z, Yr, Zr, run.grid.h)
    name = cfg.case_tag or cfg.problem.get("factory")
    rows = []

    def add(metric, value, reference):
        a = abs(value - reference)
        rows.append({"case": name, "N": cfg.N, "L": cfg.L, "M": cfg.M, "metric": metric, "value": value, "reference": reference, "abs_err": a, "rel_err": a / abs(reference) if reference != 0 else math.nan})

    add("y0_mean", run.report.y0_mean, float(np.mean(Yr[:, 0])))
    for key in ("errY", "errZ", "rmseY", "rmseZ"):
        add(key, err[key], 0.0)
    add("p_event_ok", float(run.report.event_flags[0]), 1.0)
    if cfg.N <= 3:
        q = quadrature_scheme(run.spec, run.grid, 20)
        add("quadrature_y0_mean", float(np.mean(Yr[:, 0])), float(np.mean(q.evaluate(0, hold.X[:, 0], hold.dB)[0])))
    if cfg.N <= 2 and run.basis.depth_cap == cfg.N:
        ideal = ideal_projection_theta(run.spec, run.grid, run.basis, cfg.I)
        th = np.concatenate([run.report.theta.alpha[0], math.sqrt(run.grid.h) * run.report.theta.beta[0]])
        add("theta0_ideal_dist", float(np.linalg.norm(th - ideal.theta_I[0])), 0.0)
    return rows
