"""Sample-level truncation of regression outputs.

``xi`` is an odd C^2 function, the identity on [-3/2, 3/2], with a
half-cosine taper of the slope on (3/2, 5/2) and constant +-2 beyond. The
truncation at level rho is ``rho * xi(x / rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import SparseRows
from .errors import ConfigurationError, NumericalError

DEFAULT_SAFETY = 4.0


def xi(x):
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    s = a - 1.5
    taper = 1.5 + 0.5 * s + np.sin(np.pi * s) / (2 * np.pi)
    out = np.where(a <= 1.5, a, np.where(a < 2.5, taper, 2.0))
    return np.copysign(out, x)


def xi_prime(x):
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a <= 1.5, 1.0, np.where(a < 2.5, 0.5 + 0.5 * np.cos(np.pi * (a - 1.5)), 0.0))


def rho_hat(x, rho):
    """``rho * xi(x / rho)``; rho = inf gives the identity."""
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)
    with np.errstate(invalid="ignore"):
        out = rho * xi(x / rho)
    # exact identity on |x| <= 3/2 rho (rho * (x / rho) can differ from x by an ulp)
    return np.where(np.isinf(rho) | (np.abs(x) <= 1.5 * rho), x, out)


@dataclass(frozen=True)
class TruncationProfile:
    C0: float
    mode: str = "fixed"

    @property
    def active(self) -> bool:
        return math.isfinite(self.C0)

    def levels(self, p: SparseRows) -> np.ndarray:
        """rho^{N,m}_k = max(|p^m_k| sqrt(C0), 1); zeta uses the same level."""
        if not self.active:
            return np.full(p.M, np.inf)
        return np.maximum(p.row_norms() * math.sqrt(self.C0), 1.0)

    def truncate_y(self, y, rho):
        return rho_hat(y, rho)

    def truncate_z(self, z, rho, h: float):
        sq = math.sqrt(h)
        return rho_hat(sq * np.asarray(z, dtype=float), rho) / sq


NO_TRUNCATION = TruncationProfile(math.inf, "off")


def make_truncation(mode: str, *, value: float | None = None, safety: float = DEFAULT_SAFETY, pilot_moments=None) -> TruncationProfile:
    """Build a profile from a fixed C0 or from pilot second moments.

    ``pilot_moments`` holds, per time index, ``mean Y_k^2 + h mean Z_k^2``
    from an untruncated pilot solve.
    """
    if mode == "fixed":
        if value is None or not (value > 0 and math.isfinite(value)):
            raise ConfigurationError(f"fixed C0 must be a positive finite number, got {value!r}")
        return TruncationProfile(float(value), "fixed")
    if mode == "pilot":
        if not safety > 0:
            raise ConfigurationError(f"C0 safety factor must be positive, got {safety!r}")
        if pilot_moments is None:
            raise ConfigurationError("pilot C0 needs pilot moments")
        m = np.asarray(pilot_moments, dtype=float)
        if m.size == 0 or not np.all(np.isfinite(m)):
            raise NumericalError("pilot solve diverged (non-finite moments); set a fixed C0 instead")
        return TruncationProfile(float(safety * max(float(m.max()), 1e-300)), "pilot")
    raise ConfigurationError(f"unknown C0 mode {mode!r}; expected 'fixed' or 'pilot'")
