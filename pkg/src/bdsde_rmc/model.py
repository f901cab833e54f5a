"""Problem definition: coefficients of the forward SDE and of the doubly
stochastic backward equation, plus a catalogue of builtin test cases.

All coefficient callables must accept and return numpy arrays elementwise
(scalar in, scalar out also works) and must be pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, ValidationError

Array = np.ndarray

BUILTIN_TAGS = ("martingale", "linear_f", "constant_g", "linear_g", "quadratic_terminal")

DEFAULT_PARAMS = {
    "martingale": {},
    "linear_f": {"a": 0.5},
    "constant_g": {"c": 0.5},
    "linear_g": {"c": 0.2},
    "quadratic_terminal": {},
}


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the forward-backward doubly stochastic system.

    ``drift``/``diffusion`` act on the state, ``driver`` is f(x, y, z),
    ``backward_driver`` is g(x, y) (integrated against the backward Brownian
    motion) and ``terminal`` is the payoff Phi. The Lipschitz constants are
    declared by the user in the squared form |f(p)-f(q)|^2 <= L_f |p-q|^2.
    """

    drift: Callable
    diffusion: Callable
    driver: Callable
    backward_driver: Callable
    terminal: Callable
    lipschitz_f: float
    lipschitz_g: float
    x0: float = 1.0
    T: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if not (self.lipschitz_f >= 0 and self.lipschitz_g >= 0):
            raise ConfigurationError("Lipschitz constants must be nonnegative")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ConfigurationError(f"horizon T must be positive, got {self.T}")
        if not np.isfinite(self.x0):
            raise ConfigurationError("initial state must be finite")


@dataclass(frozen=True)
class BuiltinCase:
    """A builtin tag with its parameters; carries a closed-form discrete solution."""

    tag: str
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def closed_form(self) -> str:
        return {
            "martingale": "Y_k = X_k, Z_k = sigma",
            "linear_f": "Y_k = X_k (1-ah)^-(N-k), Z_k = sigma (1-ah)^-(N-k-1)",
            "constant_g": "Y_k = X_k + c sum_{j>=k} dB_j, Z_k = sigma",
            "linear_g": "Y_k = X_k prod_{j>=k} (1 + c dB_j), Z_k = sigma prod_{j>=k} (1 + c dB_j)",
            "quadratic_terminal": "Y_k = X_k^2 + (N-k) h, Z_k = 2 X_k",
        }[self.tag]


def _zero_f(x, y, z):
    return np.zeros(np.broadcast(x, y, z).shape)


def _zero_g(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _identity(x):
    return np.asarray(x, dtype=float) * 1.0


def _zero_drift(x):
    return np.zeros(np.shape(x))


def _unit_diffusion(x):
    return np.ones(np.shape(x))


def make_builtin_case(tag: str, params: Mapping[str, float] | None = None, *, x0: float = 1.0, T: float = 1.0):
    """Build the ProblemSpec for a builtin tag.

    Returns ``(spec, case)`` where ``case`` names the closed form used by
    :func:`bdsde_rmc.oracle.closed_form_discrete`.
    """
    if tag not in BUILTIN_TAGS:
        raise ConfigurationError(f"unknown builtin case {tag!r}; expected one of {BUILTIN_TAGS}")
    merged = dict(DEFAULT_PARAMS[tag])
    for key, value in (params or {}).items():
        if key not in ("a", "c"):
            raise ConfigurationError(f"unknown parameter {key!r} for case {tag!r}")
        merged[key] = value
    for key, value in merged.items():
        if not np.isfinite(value):
            raise ConfigurationError(f"parameter {key} must be finite")

    f, g, phi = _zero_f, _zero_g, _identity
    lf = lg = 0.0
    if tag == "linear_f":
        a = float(merged["a"])

        def f(x, y, z, a=a):
            return a * np.broadcast_to(np.asarray(y, dtype=float), np.broadcast(x, y, z).shape)

        lf = a * a
    elif tag == "constant_g":
        c = float(merged["c"])

        def g(x, y, c=c):
            return np.full(np.broadcast(x, y).shape, c)

    elif tag == "linear_g":
        c = float(merged["c"])

        def g(x, y, c=c):
            return c * np.broadcast_to(np.asarray(y, dtype=float), np.broadcast(x, y).shape)

        lg = c * c
    elif tag == "quadratic_terminal":

        def phi(x):
            return np.square(np.asarray(x, dtype=float))

    spec = ProblemSpec(
        drift=_zero_drift,
        diffusion=_unit_diffusion,
        driver=f,
        backward_driver=g,
        terminal=phi,
        lipschitz_f=lf,
        lipschitz_g=lg,
        x0=float(x0),
        T=float(T),
        name=tag,
    )
    return spec, BuiltinCase(tag, merged)


@dataclass
class LipschitzAudit:
    passed: bool
    worst_ratio_f: float
    worst_ratio_g: float
    lipschitz_f: float
    lipschitz_g: float

    @property
    def passed_f(self) -> bool:
        return self.worst_ratio_f <= self.lipschitz_f * (1 + 1e-9) + 1e-300

    @property
    def passed_g(self) -> bool:
        return self.worst_ratio_g <= self.lipschitz_g * (1 + 1e-9) + 1e-300


def _worst_ratio(points: Array, values: Array, label: str) -> float:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"{label} is not finite at input {tuple(points[i])}")
    worst = 0.0
    # row blocks keep the pairwise temporaries small
    for s in range(0, len(points), 128):
        dp = points[s : s + 128, None, :] - points[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", dp, dp)
        dv2 = (values[s : s + 128, None] - values[None, :]) ** 2
        mask = dist2 > 0
        if mask.any():
            worst = max(worst, float(np.max(dv2[mask] / dist2[mask])))
    return worst


def validate_problem(spec: ProblemSpec, *, lo: float = -10.0, hi: float = 10.0, per_axis: int = 10) -> LipschitzAudit:
    """Sampled Lipschitz audit of f and g on a regular grid of [lo, hi]^d."""
    ax = np.linspace(lo, hi, per_axis)
    pf = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    vf = np.asarray(spec.driver(pf[:, 0], pf[:, 1], pf[:, 2]), dtype=float) * np.ones(len(pf))
    ax_g = np.linspace(lo, hi, int(round(per_axis**1.5)))
    pg = np.stack(np.meshgrid(ax_g, ax_g, indexing="ij"), axis=-1).reshape(-1, 2)
    vg = np.asarray(spec.backward_driver(pg[:, 0], pg[:, 1]), dtype=float) * np.ones(len(pg))
    rf = _worst_ratio(pf, vf, "driver f")
    rg = _worst_ratio(pg, vg, "backward driver g")
    audit = LipschitzAudit(False, rf, rg, spec.lipschitz_f, spec.lipschitz_g)
    audit.passed = audit.passed_f and audit.passed_g
    return audit
