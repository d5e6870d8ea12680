"""Pre-averaging weight functions and the scalar constants built from them.

Everything downstream is driven by a weight function g on [0,1] that
vanishes at both endpoints, through a handful of integrals:

    psi1 = int_0^1 g'(x)^2 dx,          psi2 = int_0^1 g(x)^2 dx,
    phi_{u,v}(y) = int_y^1 u(x - y) v(x) dx,
    Phi11 = int_0^1 phi_{g',g'}(y)^2 dy,
    Phi12 = int_0^1 phi_{g,g}(y) phi_{g',g'}(y) dy,
    Phi22 = int_0^1 phi_{g,g}(y)^2 dy,

plus discrete (finite-window) versions of psi1/psi2 at a given window
length.  Supported weights are piecewise linear, so every integrand is a
piecewise polynomial: composite Gauss-Legendre rules on subintervals
split at the kinks integrate them exactly, well inside the advertised
tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidParameterError, NumericError

QUAD_ATOL = 1e-10

_NODES_LO, _WEIGHTS_LO = np.polynomial.legendre.leggauss(16)
_NODES_HI, _WEIGHTS_HI = np.polynomial.legendre.leggauss(24)

# Exact values for the triangular weight g(x) = min(x, 1-x).  Confirmed
# against the quadrature oracle in the test suite before being frozen here.
MINMAX_PSI1 = 1.0
MINMAX_PSI2 = 1.0 / 12.0
MINMAX_PHI11 = 1.0 / 6.0
MINMAX_PHI12 = 1.0 / 96.0
MINMAX_PHI22 = 151.0 / 80640.0


def _triangle(x):
    x = np.asarray(x, dtype=float)
    return np.minimum(x, 1.0 - x)


def _triangle_deriv(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.5, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """A weight function g with its piecewise derivative and kink locations.

    `kinks` lists the interior points where g is not C^1; quadrature
    splits at them (and their y-shifted images) so piecewise-polynomial
    integrands are integrated exactly.
    """

    g: Callable[[np.ndarray], np.ndarray]
    gprime: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    kinks: tuple = ()

    def __post_init__(self):
        g0 = float(self.g(0.0))
        g1 = float(self.g(1.0))
        if abs(g0) > 1e-14 or abs(g1) > 1e-14:
            raise InvalidParameterError(
                f"weight function must vanish at both endpoints, got g(0)={g0!r}, g(1)={g1!r}"
            )
        energy = integrate_split(lambda x: self.g(x) ** 2, 0.0, 1.0, self.kinks)
        if energy <= 1e-10:
            raise InvalidParameterError("weight function has (numerically) zero L2 norm")


_MINMAX = WeightProfile(g=_triangle, gprime=_triangle_deriv, kind="minmax", kinks=(0.5,))


def min_max_profile() -> WeightProfile:
    """The triangular weight g(x) = min(x, 1-x)."""
    return _MINMAX


def piecewise_linear_profile(knots: Sequence[float], values: Sequence[float]) -> WeightProfile:
    """Weight profile interpolating (knots, values) linearly.

    Knots must start at 0 and end at 1, strictly increasing; the first and
    last values must be 0.  The derivative is taken piecewise constant.
    """
    kx = np.asarray(knots, dtype=float)
    ky = np.asarray(values, dtype=float)
    if kx.ndim != 1 or kx.shape != ky.shape or len(kx) < 2:
        raise InvalidParameterError("knots and values must be 1-d sequences of equal length >= 2")
    if kx[0] != 0.0 or kx[-1] != 1.0 or np.any(np.diff(kx) <= 0):
        raise InvalidParameterError("knots must increase strictly from 0 to 1")
    slopes = np.diff(ky) / np.diff(kx)

    def g(x, _kx=kx, _ky=ky):
        return np.interp(np.asarray(x, dtype=float), _kx, _ky)

    def gprime(x, _kx=kx, _slopes=slopes):
        idx = np.clip(np.searchsorted(_kx, np.asarray(x, dtype=float), side="right") - 1,
                      0, len(_slopes) - 1)
        return _slopes[idx]

    return WeightProfile(g=g, gprime=gprime, kind="custom", kinks=tuple(kx[1:-1]))


def _gauss_piece(f, a, b, nodes, wts):
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return half * float(np.dot(wts, f(mid + half * nodes)))


def _composite(f, a, b, cuts, nodes, wts):
    pts = np.unique(np.concatenate([[a, b], [c for c in cuts if a < c < b]]))
    return sum(_gauss_piece(f, lo, hi, nodes, wts) for lo, hi in zip(pts[:-1], pts[1:]))


def integrate_split(f, a: float, b: float, cuts: Sequence[float] = (), atol: float = QUAD_ATOL) -> float:
    """Integrate f over [a, b], splitting at the given interior cut points.

    Evaluates a 16- and a 24-point composite Gauss-Legendre rule; their
    disagreement is the residual estimate.  Raises NumericError if it
    exceeds the tolerance (cannot happen for piecewise polynomials of the
    supported weight class, for which both rules are exact).
    """
    if b <= a:
        return 0.0
    lo = _composite(f, a, b, cuts, _NODES_LO, _WEIGHTS_LO)
    hi = _composite(f, a, b, cuts, _NODES_HI, _WEIGHTS_HI)
    resid = abs(hi - lo)
    if resid > max(atol, 1e-12 * abs(hi)):
        raise NumericError("quadrature did not converge on the requested interval", residual=resid)
    return hi


def phi(u, v, y: float, kinks_u: Sequence[float] = (), kinks_v: Sequence[float] = ()) -> float:
    """The lag-overlap integral phi_{u,v}(y) = int_y^1 u(x-y) v(x) dx for y in [0,1]."""
    if not 0.0 <= y <= 1.0:
        raise InvalidParameterError(f"lag must lie in [0, 1], got {y!r}")
    if y >= 1.0:
        return 0.0
    cuts = list(kinks_v) + [y + k for k in kinks_u] + [y + 1.0]
    return integrate_split(lambda x: u(x - y) * v(x), y, 1.0, cuts)


def _structure_cuts(kinks_u, kinks_v):
    # y-values at which the piecewise structure of phi_{u,v}(y) can change:
    # alignments of a kink of v with a (shifted) kink of u, plus the kinks.
    base_u = np.concatenate([[0.0, 1.0], np.asarray(kinks_u, dtype=float)])
    base_v = np.concatenate([[0.0, 1.0], np.asarray(kinks_v, dtype=float)])
    diffs = (base_v[:, None] - base_u[None, :]).ravel()
    return [d for d in np.unique(diffs) if 0.0 < d < 1.0]


def capital_phi(profile: WeightProfile) -> tuple[float, float, float]:
    """The constants (Phi11, Phi12, Phi22) entering the asymptotic variance."""
    g, gp, kk = profile.g, profile.gprime, profile.kinks

    def phi_gg(y):
        return phi(g, g, y, kk, kk)

    def phi_gpgp(y):
        return phi(gp, gp, y, kk, kk)

    cuts = _structure_cuts(kk, kk)

    def vec(f):
        return lambda ys: np.array([f(float(t)) for t in np.atleast_1d(ys)])

    phi11 = integrate_split(vec(lambda y: phi_gpgp(y) ** 2), 0.0, 1.0, cuts, atol=1e-8)
    phi12 = integrate_split(vec(lambda y: phi_gg(y) * phi_gpgp(y)), 0.0, 1.0, cuts, atol=1e-8)
    phi22 = integrate_split(vec(lambda y: phi_gg(y) ** 2), 0.0, 1.0, cuts, atol=1e-8)
    return phi11, phi12, phi22


def discrete_weights(profile: WeightProfile, k_n: int) -> np.ndarray:
    """Window weights g(p/k_n) for p = 0..k_n-1; entry 0 is exactly zero."""
    if k_n < 2:
        raise InvalidParameterError(f"pre-averaging window must be at least 2, got {k_n}")
    w = np.asarray(profile.g(np.arange(k_n) / k_n), dtype=float)
    w[0] = 0.0
    return w


def discrete_psis(profile: WeightProfile, k_n: int) -> tuple[float, float]:
    """Finite-window (psi1, psi2):

    psi2_disc = (1/k) sum_{p=1}^{k-1} g(p/k)^2
    psi1_disc = k sum_{p=1}^{k} (g(p/k) - g((p-1)/k))^2
    """
    w = discrete_weights(profile, k_n)
    full = np.concatenate([w, [0.0]])  # g(1) = 0 closes the window
    psi2_d = float(np.sum(w**2) / k_n)
    psi1_d = float(k_n * np.sum(np.diff(full) ** 2))
    return psi1_d, psi2_d


@dataclass(frozen=True)
class WeightConstants:
    """All scalar constants for one profile at one window length."""

    psi1: float
    psi2: float
    phi11: float
    phi12: float
    phi22: float
    psi1_disc: float
    psi2_disc: float
    k_n: int

    def __post_init__(self):
        if min(self.psi1, self.psi2, self.phi11, self.phi22) <= 0 or self.phi12 < 0:
            raise InvalidParameterError("weight constants violate positivity")
        if self.k_n < 2:
            raise InvalidParameterError(f"window must be at least 2, got {self.k_n}")


@lru_cache(maxsize=128)
def weight_constants(profile: WeightProfile, k_n: int) -> WeightConstants:
    """Assemble the continuous and discrete constants for `profile` at window `k_n`."""
    psi1 = integrate_split(lambda x: profile.gprime(x) ** 2, 0.0, 1.0, profile.kinks)
    psi2 = integrate_split(lambda x: profile.g(x) ** 2, 0.0, 1.0, profile.kinks)
    phi11, phi12, phi22 = capital_phi(profile)
    psi1_d, psi2_d = discrete_psis(profile, k_n)
    return WeightConstants(
        psi1=psi1, psi2=psi2, phi11=phi11, phi12=phi12, phi22=phi22,
        psi1_disc=psi1_d, psi2_disc=psi2_d, k_n=k_n,
    )
