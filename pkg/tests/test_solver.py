import dataclasses
import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from bdsde_rmc.basis import build_basis, eval_p
from bdsde_rmc.errors import ConfigurationError
from bdsde_rmc.grid_paths import build_time_grid, simulate_paths
from bdsde_rmc.model import make_builtin_case
from bdsde_rmc.oracle import closed_form_discrete
from bdsde_rmc.solver import (
    backward_solve,
    evaluate_solution,
    pilot_truncation,
    project_terminal,
    write_diagnostics_csv,
    write_report_csv,
)
from bdsde_rmc.truncation import NO_TRUNCATION, make_truncation

from conftest import zero_problem


def setup_case(tag, N, L, M, seed=1, params=None, pilot=50_000, depth=None):
    spec, case = make_builtin_case(tag, params)
    grid = build_time_grid(spec.T, N)
    basis = build_basis(spec, grid, L, pilot, seed, depth)
    batch = simulate_paths(spec, grid, M, seed)
    return spec, case, grid, basis, batch


def test_zero_problem_gives_zero():
    spec = zero_problem()
    grid = build_time_grid(1.0, 3)
    basis = build_basis(spec, grid, 2, 10_000, 1)
    batch = simulate_paths(spec, grid, 2000, 1)
    rep = backward_solve(spec, grid, basis, batch, 2, make_truncation("fixed", value=1.0))
    assert all(np.all(a == 0) for a in rep.theta.alpha) and all(np.all(b == 0) for b in rep.theta.beta)
    assert np.all(rep.y0_pathwise == 0) and np.all(rep.Z == 0)


def test_project_terminal_examples():
    spec, _, grid, basis, batch = setup_case("martingale", 2, 4, 4000)
    const = dataclasses.replace(spec, terminal=lambda x: 3.0 * np.ones(np.shape(x)))
    alpha, p, _ = project_terminal(batch, basis, const)
    probs = basis.state_partitions[2].probs
    # exact reproduction of the constant on every sample
    assert np.allclose(p.dense() @ alpha, 3.0)
    assert np.allclose(alpha, 3.0 * np.sqrt(probs))
    zero = dataclasses.replace(spec, terminal=lambda x: np.zeros(np.shape(x)))
    assert np.all(project_terminal(batch, basis, zero)[0] == 0)
    frozen = dataclasses.replace(spec, diffusion=lambda x: np.zeros(np.shape(x)), x0=0.7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b2 = build_basis(frozen, grid, 4, 1000, 1)
    alpha, _, _ = project_terminal(simulate_paths(frozen, grid, 100, 1), b2, frozen)
    assert alpha == pytest.approx([0.7])


def test_f_zero_picard_is_stationary():
    spec, _, grid, basis, batch = setup_case("linear_g", 3, 2, 4000)
    rep = backward_solve(spec, grid, basis, batch, 4)
    for k in range(3):
        assert rep.theta.picard_diffs[k][1:] == [0.0, 0.0, 0.0]
        assert rep.picard_ratios(k) == [0.0, 0.0, 0.0]


def test_martingale_single_cell():
    # one state cell: the terminal projection is the constant mean, so Z vanishes
    spec, _, grid, basis, batch = setup_case("martingale", 1, 1, 20_000)
    rep = backward_solve(spec, grid, basis, batch, 1)
    tol = 4 / math.sqrt(batch.M)
    assert rep.theta.alpha[0][0] == pytest.approx(spec.x0, abs=tol)
    assert abs(rep.theta.beta[0][0]) < 1e-12


def test_martingale_z_approaches_sigma_with_cells():
    spec, _, grid, basis, batch = setup_case("martingale", 1, 16, 50_000, pilot=200_000)
    rep = backward_solve(spec, grid, basis, batch, 1)
    # E[E[X_1 | cell] dW] / h with X_1 = x0 + dW, h = 1
    z = basis.state_partitions[1].edges - spec.x0
    mass = np.diff(norm.cdf(z))
    expected = np.sum(np.diff(norm.pdf(z)) ** 2 / mass)
    assert 0.95 < expected < 1.0
    assert rep.theta.beta[0][0] == pytest.approx(expected, abs=4 / math.sqrt(batch.M))


def test_martingale_pipeline():
    spec, _, grid, basis, batch = setup_case("martingale", 4, 4, 20_000, seed=3, pilot=100_000)
    trunc = pilot_truncation(spec, grid, basis, 2, 3, batch.M)
    rep = backward_solve(spec, grid, basis, batch, 2, trunc)
    assert abs(rep.y0_mean - spec.x0) <= 4 * rep.terminal_std / math.sqrt(batch.M)
    assert math.sqrt(np.mean((rep.y0_pathwise - batch.X[:, 0]) ** 2)) <= 0.1 * rep.terminal_std


def test_truncation_bounds_hold():
    spec, _, grid, basis, batch = setup_case("linear_g", 3, 3, 3000)
    rep = backward_solve(spec, grid, basis, batch, 2, make_truncation("fixed", value=0.05))
    h = grid.h
    for k in range(4):
        rho = rep.truncation.levels(eval_p(basis, k, batch.X[:, k], batch.dB))
        assert np.all(np.abs(rep.Y[:, k]) <= 2 * rho + 1e-12)
        if k < 3:
            assert np.all(math.sqrt(h) * np.abs(rep.Z[:, k]) <= 2 * rho + 1e-12)


def test_truncation_is_identity_when_small():
    spec, _, grid, basis, batch = setup_case("constant_g", 2, 2, 3000)
    a = backward_solve(spec, grid, basis, batch, 1, NO_TRUNCATION)
    b = backward_solve(spec, grid, basis, batch, 1, make_truncation("fixed", value=1e6))
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z)


def test_deterministic_and_evaluate_on_training_batch():
    spec, _, grid, basis, batch = setup_case("linear_g", 3, 3, 5000)
    trunc = make_truncation("fixed", value=5.0)
    a = backward_solve(spec, grid, basis, batch, 3, trunc)
    b = backward_solve(spec, grid, basis, simulate_paths(spec, grid, 5000, 1), 3, trunc)
    assert all(np.array_equal(x, y) for x, y in zip(a.theta.alpha, b.theta.alpha))
    Y, Z = evaluate_solution(a, batch, basis)
    assert np.array_equal(Y, a.Y) and np.array_equal(Z, a.Z)


def test_evaluate_zero_coefficients_and_mismatch():
    spec = zero_problem()
    grid = build_time_grid(1.0, 2)
    basis = build_basis(spec, grid, 2, 10_000, 1)
    rep = backward_solve(spec, grid, basis, simulate_paths(spec, grid, 500, 1), 1)
    Y, Z = evaluate_solution(rep, simulate_paths(spec, grid, 300, 9))
    assert np.all(Y == 0) and np.all(Z == 0)
    other = build_basis(spec, grid, 3, 10_000, 1)
    with pytest.raises(ConfigurationError):
        evaluate_solution(rep, simulate_paths(spec, grid, 300, 9), other)


def test_constant_g_heldout_close_to_in_sample():
    spec, case, grid, basis, batch = setup_case("constant_g", 3, 3, 20_000, seed=5)
    rep = backward_solve(spec, grid, basis, batch, 3, pilot_truncation(spec, grid, basis, 3, 5, 20_000))
    hold = simulate_paths(spec, grid, 20_000, 5, path_offset=10**9)
    Yin, _ = closed_form_discrete(case, batch)
    Yout, _ = closed_form_discrete(case, hold)
    rin = math.sqrt(np.mean((rep.Y - Yin) ** 2))
    Y, _ = evaluate_solution(rep, hold)
    rout = math.sqrt(np.mean((Y - Yout) ** 2))
    assert 0.5 * rin <= rout <= 1.5 * rin


def test_picard_contraction_linear_f():
    spec, _, grid, basis, batch = setup_case("linear_f", 4, 2, 20_000, params={"a": 0.5})
    rep = backward_solve(spec, grid, basis, batch, 4)
    h, Lf = grid.h, spec.lipschitz_f
    for k in range(4):
        if rep.localization[k].event_ok:
            assert max(rep.picard_ratios(k)) <= 2 * Lf * h / (1 - h) + 0.1


def test_freeze_mode_keeps_beta():
    spec, _, grid, basis, batch = setup_case("linear_f", 3, 2, 5000)
    frz = backward_solve(spec, grid, basis, batch, 3, picard_beta="freeze")
    one = backward_solve(spec, grid, basis, batch, 1)
    # at the last step the targets of both runs coincide, so beta is the first fit
    assert np.array_equal(frz.theta.beta[2], one.theta.beta[2])


def test_step_size_and_mode_checks():
    spec, _, grid, basis, batch = setup_case("linear_f", 1, 1, 200, params={"a": 1.0})
    with pytest.raises(ConfigurationError, match="h\\^2 L_f"):
        backward_solve(spec, grid, basis, batch, 1)
    spec, _, grid, basis, batch = setup_case("martingale", 2, 2, 200)
    with pytest.raises(ConfigurationError):
        backward_solve(spec, grid, basis, batch, 0)
    with pytest.raises(ConfigurationError):
        backward_solve(spec, grid, basis, batch, 1, picard_beta="bogus")


def test_small_sample_warns():
    spec, _, grid, basis, _ = setup_case("martingale", 3, 3, 10)
    with pytest.warns(UserWarning, match="pseudo-solves"):
        backward_solve(spec, grid, basis, simulate_paths(spec, grid, 20, 1), 1)


def test_report_files(tmp_path):
    spec, _, grid, basis, batch = setup_case("linear_f", 2, 2, 2000)
    rep = backward_solve(spec, grid, basis, batch, 2)
    write_report_csv(rep, tmp_path / "r.csv")
    write_diagnostics_csv(rep, tmp_path / "d.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "k,t,|alpha|,|beta|,norm_V,norm_P,event_ok,picard_last_ratio"
    assert len(lines) == 4
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "k,norm_V,norm_P,lambda_min,event_ok"
    s = rep.summary()
    assert {"y0_mean", "y0_std", "runtimes"} <= set(s)
