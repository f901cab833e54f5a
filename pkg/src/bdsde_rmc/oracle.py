"""Reference solutions independent of the Monte Carlo solver.

* :func:`closed_form_discrete` - exact solution of the time-discrete scheme
  for the builtin linear cases, evaluated on given increments.
* :func:`quadrature_scheme` - the implicit time-discrete scheme with the
  conditional expectations computed by tensor Gauss-Hermite quadrature
  (N <= 3).
* :func:`ideal_projection_theta` - the projection scheme with exact
  expectations in place of sample means (N <= 2), by piecewise Gauss-Legendre
  integration that splits at every indicator discontinuity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisSystem, eval_p, eval_v
from .errors import ConfigurationError, NumericalError
from .grid_paths import PathBatch, TimeGrid
from .model import BuiltinCase, ProblemSpec
from .regression import LeastSquaresDesign

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAXITER = 200


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------


def closed_form_values(case: BuiltinCase, X, dB, h: float):
    """Exact discrete (Y, Z) given states X[..., 0..N] and increments dB[..., 0..N-1].

    Y has the shape of X; Z has the shape of dB (Z_N = 0 is not stored).
    """
    X = np.asarray(X, dtype=float)
    dB = np.asarray(dB, dtype=float)
    N = X.shape[-1] - 1
    if dB.shape[-1] != N:
        raise ConfigurationError("dB must have one column fewer than X")
    steps_left = N - np.arange(N + 1)
    tag, prm = case.tag, case.params
    if tag == "martingale":
        return X.copy(), np.ones(np.broadcast_shapes(X[..., :N].shape, dB.shape))
    if tag == "linear_f":
        ah = prm["a"] * h
        if ah >= 1:
            raise ConfigurationError(f"a*h = {ah} >= 1: the implicit linear step has no solution")
        growth = (1.0 - ah) ** (-steps_left.astype(float))
        Z = np.broadcast_to(growth[1:], np.broadcast_shapes(X[..., :N].shape, dB.shape)).copy()
        return X * growth, Z
    if tag == "constant_g":
        tail = np.concatenate([np.cumsum(dB[..., ::-1], axis=-1)[..., ::-1], np.zeros(dB.shape[:-1] + (1,))], axis=-1)
        return X + prm["c"] * tail, np.ones(np.broadcast_shapes(X[..., :N].shape, dB.shape))
    if tag == "linear_g":
        prod = np.cumprod((1.0 + prm["c"] * dB)[..., ::-1], axis=-1)[..., ::-1]
        full = np.concatenate([prod, np.ones(dB.shape[:-1] + (1,))], axis=-1)
        return X * full, np.broadcast_to(prod, np.broadcast_shapes(X[..., :N].shape, dB.shape)).copy()
    if tag == "quadratic_terminal":
        return X**2 + steps_left * h, 2.0 * X[..., :N] * np.ones(dB.shape)
    raise ConfigurationError(f"no closed form for case {tag!r}")


def closed_form_discrete(case: BuiltinCase, batch: PathBatch, grid: TimeGrid | None = None):
    grid = batch.grid if grid is None else grid
    return closed_form_values(case, batch.X, batch.dB, grid.h)


# --------------------------------------------------------------------------
# Gauss-Hermite tensor quadrature of the time-discrete scheme
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Hermite rule for N(0, h): ``sum w_i f(x_i) ~ E f(sqrt(h) G)``."""

    n: int
    h: float
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite_grid(n: int, h: float) -> QuadratureGrid:
    if n < 1:
        raise ConfigurationError("need at least one quadrature node")
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return QuadratureGrid(n, float(h), math.sqrt(h) * x, w / math.sqrt(2 * math.pi))


def _fixed_point(spec: ProblemSpec, x, a, z, h: float):
    """Solve y = a + h f(x, y, z) by iteration."""
    y = a.copy()
    for _ in range(FIXED_POINT_MAXITER):
        y_new = a + h * np.asarray(spec.driver(x, y, z), dtype=float)
        if not np.all(np.isfinite(y_new)):
            raise NumericalError("implicit step produced non-finite values")
        if np.max(np.abs(y_new - y), initial=0.0) <= FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(y_new), initial=0.0))):
            return y_new
        y = y_new
    raise NumericalError(f"implicit step did not converge in {FIXED_POINT_MAXITER} iterations")


@dataclass
class QuadratureSolution:
    """Y[k], Z[k] on tensor states with axes [dW_1..dW_k, dB_k..dB_{N-1}]."""

    spec: ProblemSpec
    grid: TimeGrid
    quad: QuadratureGrid
    Y: list
    Z: list
    X: list  # X[k] broadcastable to the axes of Y[k]

    def tensor_increments(self, k: int):
        """dW (k axes) and dB (N-k axes) node values broadcast to Y[k]'s shape."""
        N = self.grid.N
        shape = (self.quad.n,) * N
        axes = []
        for j in range(N):
            s = [1] * N
            s[j] = self.quad.n
            axes.append(np.broadcast_to(self.quad.nodes.reshape(s), shape))
        return axes[:k], axes[k:]

    def evaluate(self, k: int, x, db_tail):
        """Recursive evaluation of (Y_k, Z_k) at arbitrary states.

        ``x`` holds X_k values (P,), ``db_tail`` the increments dB_k..dB_{N-1}
        as a (P, N-k) array.
        """
        return _recursive(self.spec, self.grid, self.quad, k, np.asarray(x, dtype=float).reshape(-1), np.asarray(db_tail, dtype=float).reshape(len(np.atleast_1d(x)), -1))


def quadrature_scheme(spec: ProblemSpec, grid: TimeGrid, n_nodes: int = 20) -> QuadratureSolution:
    N, h = grid.N, grid.h
    if N > 3:
        raise ConfigurationError(f"tensor quadrature is limited to N <= 3, got {N}")
    if h * h * spec.lipschitz_f >= 1:
        raise ConfigurationError("h^2 L_f >= 1")
    q = gauss_hermite_grid(n_nodes, h)
    n = q.n
    # X[k] has k live W-axes followed by N-k singleton axes
    X = [np.full((1,) * N, spec.x0)]
    for j in range(N):
        s = [1] * N
        s[j] = n
        dw = q.nodes.reshape(s)
        x = X[-1]
        X.append(x + h * spec.drift(x) + spec.diffusion(x) * dw)
    Y = [None] * (N + 1)
    Z = [None] * (N + 1)
    Y[N] = np.broadcast_to(np.asarray(spec.terminal(X[N]), dtype=float), (n,) * N).copy()
    Z[N] = np.zeros((n,) * N)
    for k in range(N - 1, -1, -1):
        w = q.weights.reshape([n if j == k else 1 for j in range(N)])
        dw = q.nodes.reshape([n if j == k else 1 for j in range(N)])
        db = dw  # the new axis k now carries dB_k
        y1 = Y[k + 1]
        g1 = np.asarray(spec.backward_driver(X[k + 1], y1), dtype=float) * np.ones_like(y1)
        ey = np.sum(w * y1, axis=k, keepdims=True)
        eg = np.sum(w * g1, axis=k, keepdims=True)
        eyw = np.sum(w * dw * y1, axis=k, keepdims=True)
        egw = np.sum(w * dw * g1, axis=k, keepdims=True)
        z = (eyw + db * egw) / h
        a = ey + db * eg
        shape = (n,) * N
        z = np.broadcast_to(z, shape).copy()
        a = np.broadcast_to(a, shape).copy()
        Y[k] = _fixed_point(spec, np.broadcast_to(X[k], shape), a, z, h)
        Z[k] = z
    return QuadratureSolution(spec, grid, q, Y, Z, X)


def _recursive(spec, grid, quad, k, x, db):
    N, h = grid.N, grid.h
    if k == N:
        return np.asarray(spec.terminal(x), dtype=float) * np.ones_like(x), np.zeros_like(x)
    n = quad.n
    P = len(x)
    mean = x + h * np.asarray(spec.drift(x), dtype=float)
    sig = np.asarray(spec.diffusion(x), dtype=float) * np.ones(P)
    x1 = mean[:, None] + sig[:, None] * quad.nodes[None, :]
    y1, _ = _recursive(spec, grid, quad, k + 1, x1.reshape(-1), np.repeat(db[:, 1:], n, axis=0))
    y1 = y1.reshape(P, n)
    g1 = np.asarray(spec.backward_driver(x1, y1), dtype=float) * np.ones_like(y1)
    w, dw = quad.weights, quad.nodes
    b = db[:, 0]
    z = (y1 @ (w * dw) + b * (g1 @ (w * dw))) / h
    a = y1 @ w + b * (g1 @ w)
    return _fixed_point(spec, x, a, z, h), z


# --------------------------------------------------------------------------
# ideal projection by piecewise Gauss-Legendre integration
# --------------------------------------------------------------------------

_GL_NODES = 8
_TAIL = 10.0  # truncate Gaussian axes at +-10 standard deviations


def _axis_rule(breaks: np.ndarray, h: float, n_nodes: int):
    """Nodes/weights of E over N(0, h) for many independent breakpoint sets.

    ``breaks`` is (P, B); returns (P, Q) nodes and weights, each row a
    piecewise Gauss-Legendre rule whose panels never straddle a breakpoint.
    """
    s = math.sqrt(h)
    base = np.arange(-_TAIL, _TAIL + 1e-9, 2.0) * s
    P = breaks.shape[0]
    inner = np.clip(breaks, -_TAIL * s, _TAIL * s)
    ends = np.sort(np.concatenate([np.broadcast_to(base, (P, len(base))), inner], axis=1), axis=1)
    a, b = ends[:, :-1], ends[:, 1:]
    t, wt = np.polynomial.legendre.leggauss(n_nodes)
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = (mid[:, :, None] + half[:, :, None] * t).reshape(P, -1)
    weights = (half[:, :, None] * wt).reshape(P, -1)
    dens = np.exp(-0.5 * nodes**2 / h) / math.sqrt(2 * math.pi * h)
    return nodes, weights * dens


@dataclass
class PointCloud:
    """Weighted sample (nodes of a product rule) over forward states and dB."""

    weight: np.ndarray  # (P,)
    X: np.ndarray  # (P, K+1) states X_0..X_K
    dW: np.ndarray  # (P, K) with dW[:, j] the increment over [t_j, t_{j+1}]
    dB: np.ndarray  # (P, N) with zeros where the axis was not integrated


def forward_cloud(spec: ProblemSpec, grid: TimeGrid, basis: BasisSystem, K: int, b_axes, n_nodes: int = _GL_NODES) -> PointCloud:
    """Product rule over dW_1..dW_K (split at state-cell edges) and the listed dB axes."""
    h, N = grid.h, grid.N
    w = np.ones(1)
    X = np.full((1, 1), spec.x0)
    dW = np.zeros((1, 0))
    for j in range(K):
        x = X[:, -1]
        sig = np.asarray(spec.diffusion(x), dtype=float) * np.ones_like(x)
        if np.any(sig <= 0):
            raise ConfigurationError("ideal projection needs a positive diffusion coefficient")
        mean = x + h * np.asarray(spec.drift(x), dtype=float)
        edges = basis.state_partitions[j + 1].edges[1:-1]
        brk = (edges[None, :] - mean[:, None]) / sig[:, None]
        nodes, wts = _axis_rule(brk, h, n_nodes)
        q = nodes.shape[1]
        X = np.concatenate([np.repeat(X, q, axis=0), (mean[:, None] + sig[:, None] * nodes).reshape(-1, 1)], axis=1)
        dW = np.concatenate([np.repeat(dW, q, axis=0), nodes.reshape(-1, 1)], axis=1)
        w = (w[:, None] * wts).reshape(-1)
    dB = np.zeros((len(w), N))
    gedges = basis.db_partition.edges[1:-1][None, :]
    bnodes, bw = _axis_rule(gedges, h, n_nodes)
    bnodes, bw = bnodes[0], bw[0]
    for l in b_axes:
        q = len(bnodes)
        X = np.repeat(X, q, axis=0)
        dW = np.repeat(dW, q, axis=0)
        dB = np.repeat(dB, q, axis=0)
        dB[:, l] = np.tile(bnodes, len(dB) // q)
        w = (w[:, None] * bw).reshape(-1)
    return PointCloud(w, X, dW, dB)


@dataclass
class IdealProjection:
    """theta per k: ``theta_inf[k]`` is the Picard fixed point, ``theta_I[k]``
    the I-th iterate from zero; both are (alpha, sqrt(h) beta)."""

    theta_inf: list
    theta_I: list
    iterations: list

    def alpha(self, k: int, which: str = "I"):
        th = (self.theta_I if which == "I" else self.theta_inf)[k]
        D = len(th) if k == len(self.theta_I) - 1 else len(th) // 2
        return th[:D]


def ideal_projection_theta(spec: ProblemSpec, grid: TimeGrid, basis: BasisSystem, I: int = 1, n_nodes: int = _GL_NODES) -> IdealProjection:
    """Exact-expectation counterpart of the regression scheme.

    Each step is the L^2 projection on span(v_k) (or span(p_N) at k = N),
    computed as ``E[v v^T]^+ E[v target]`` under the product rule; this is the
    orthonormal-basis formula whenever ``E[v v^T] = Id``.
    """
    N, h = grid.N, grid.h
    if N > 2:
        raise ConfigurationError(f"ideal projection oracle is limited to N <= 2, got {N}")
    if basis.depth_cap != N:
        raise ConfigurationError("ideal projection needs the full-depth basis")
    if h * h * spec.lipschitz_f >= 1:
        raise ConfigurationError("h^2 L_f >= 1")
    sqh = math.sqrt(h)
    theta_inf = [None] * (N + 1)
    theta_I = [None] * (N + 1)
    iters = [0] * (N + 1)

    cloud = forward_cloud(spec, grid, basis, N, [], n_nodes)
    pN = eval_p(basis, N, cloud.X[:, N], cloud.dB)
    dN = LeastSquaresDesign(pN, cloud.weight)
    aN = dN.solve(np.asarray(spec.terminal(cloud.X[:, N]), dtype=float) * np.ones(len(cloud.weight)))
    theta_inf[N] = theta_I[N] = aN
    alpha_next = aN

    for k in range(N - 1, -1, -1):
        cloud = forward_cloud(spec, grid, basis, k + 1, list(range(k, N)), n_nodes)
        P = len(cloud.weight)
        p = eval_p(basis, k, cloud.X[:, k], cloud.dB)
        design = LeastSquaresDesign(eval_v(p, cloud.dW[:, k], h), cloud.weight)
        D = p.dim
        p1 = eval_p(basis, k + 1, cloud.X[:, k + 1], cloud.dB)
        y1 = _sparse_dot(p1, alpha_next)
        xk = cloud.X[:, k]
        base = y1 + cloud.dB[:, k] * np.asarray(spec.backward_driver(cloud.X[:, k + 1], y1), dtype=float) * np.ones(P)

        def step(alpha, beta):
            tgt = base + h * np.asarray(spec.driver(xk, _sparse_dot(p, alpha), _sparse_dot(p, beta)), dtype=float) * np.ones(P)
            th = design.solve(tgt)
            return th[:D], th[D:] / sqh

        # Z is fixed by the first pass (f does not see dW_{k+1}); Picard on alpha only
        a, b = step(np.zeros(D), np.zeros(D))
        snapshots = [a]
        for i in range(2, FIXED_POINT_MAXITER + 1):
            a_new, _ = step(a, b)
            done = np.max(np.abs(a_new - a), initial=0.0) <= FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(a_new), initial=0.0)))
            a = a_new
            snapshots.append(a)
            if done and i > I:
                break
        else:
            raise NumericalError(f"ideal Picard iteration did not converge at k={k}")
        iters[k] = len(snapshots)
        a_I = snapshots[min(I, len(snapshots)) - 1]
        theta_I[k] = np.concatenate([a_I, sqh * b])
        theta_inf[k] = np.concatenate([a, sqh * b])
        alpha_next = a_I
    return IdealProjection(theta_inf, theta_I, iters)


def _sparse_dot(rows, coef):
    return np.einsum("mq,mq->m", np.asarray(coef)[rows.cols], rows.vals)
