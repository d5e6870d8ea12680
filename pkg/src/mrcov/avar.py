"""Theoretical asymptotic covariance of the estimator and the standardized statistic.

The limit covariance splits into a continuous part (an integral of the
spot covariance, the noise covariance damped by the overlap process, and
the expected-duration process) and a jump part (a sum over jump times of
two-sided spot quantities).  Both are rank-4 tensors indexed by the two
entry pairs (k,l) and (k',l') of the estimated matrix.

The noise covariance always enters through its Hadamard product with the
overlap process: entry (k,l) of the noise matrix matters only in the
fraction of slots where assets k and l share an observation time.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateVarianceError,
    InvalidGroundTruthError,
    InvalidParameterError,
    NotApplicableError,
)
from .estimator import MrcEstimate
from .weights import WeightConstants


@dataclass(frozen=True)
class JumpRecord:
    """One jump: time, jump vector, and two-sided spot quantities around it."""

    time: float
    dx: np.ndarray
    sigma_left: np.ndarray
    sigma_right: np.ndarray
    g_left: float
    g_right: float
    chi_left: np.ndarray
    chi_right: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    """Simulated ground truth feeding the asymptotic-variance formulas.

    `duration`, `overlap_limit` and `noise_cov` may be constants or paths
    aligned with `times`; paths are sampled at left endpoints.
    """

    times: np.ndarray
    sigma: np.ndarray
    duration: np.ndarray | float
    overlap_limit: np.ndarray
    noise_cov: np.ndarray
    jumps: tuple = ()
    true_qv: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "jumps", tuple(self.jumps))
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise InvalidGroundTruthError("times must be a strictly increasing 1-d grid")
        if sigma.ndim != 3 or sigma.shape[0] != len(times) or sigma.shape[1] != sigma.shape[2]:
            raise InvalidGroundTruthError("sigma must be a (n_times, d, d) path")
        d = sigma.shape[1]
        if np.any(np.asarray(self.duration, dtype=float) <= 0):
            raise InvalidGroundTruthError("duration process must be strictly positive")
        chi = np.asarray(self.overlap_limit, dtype=float)
        if chi.shape[-2:] != (d, d) or np.any(chi < 0) or np.any(chi > 1):
            raise InvalidGroundTruthError("overlap limit must be d x d with entries in [0, 1]")
        diag = chi[..., np.arange(d), np.arange(d)]
        if not np.allclose(diag, 1.0, atol=1e-12):
            raise InvalidGroundTruthError("overlap limit must have unit diagonal")
        ups = np.asarray(self.noise_cov, dtype=float)
        if ups.shape[-2:] != (d, d) or not np.allclose(ups, np.swapaxes(ups, -1, -2), atol=1e-12):
            raise InvalidGroundTruthError("noise covariance must be symmetric d x d")

    @property
    def n_assets(self) -> int:
        return self.sigma.shape[1]


@dataclass(frozen=True)
class AvarResult:
    """Continuous, jump and total asymptotic covariance tensors, shape (d, d, d, d)."""

    continuous: np.ndarray
    jump: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.continuous + self.jump

    def variance(self, k: int, l: int) -> float:
        return float(self.total[k, l, k, l])


def _path(x, n: int, shape: tuple) -> np.ndarray:
    """Broadcast a constant or per-time quantity to n left-endpoint samples."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == len(shape):  # constant in time
        return np.broadcast_to(arr, (n, *shape))
    return arr[:n]


def _pair_sym(t: np.ndarray) -> np.ndarray:
    # A^{kk'}B^{ll'} given -> add the (k,l')(l,k') companion
    return t + t.transpose(0, 1, 3, 2)


def avar_continuous(truth: GroundTruth, theta: float, wc: WeightConstants) -> np.ndarray:
    """Continuous-part covariance tensor, a left-endpoint integral over the grid.

    Entry (k,l,k',l') integrates

        Phi22 theta {S^{kk'}S^{ll'} + S^{kl'}S^{lk'}} G
        + Phi11/theta^3 {U^{kk'}U^{ll'} + U^{kl'}U^{lk'}} / G
        + Phi12/theta {S^{kk'}U^{ll'} + S^{lk'}U^{kl'} + S^{ll'}U^{kk'} + S^{kl'}U^{lk'}}

    times 2/psi2^2, where S is the spot covariance and U the noise
    covariance Hadamard-multiplied by the overlap limit.
    """
    if theta <= 0:
        raise InvalidParameterError(f"theta must be positive, got {theta}")
    n = len(truth.times) - 1
    d = truth.n_assets
    dt = np.diff(truth.times)
    S = truth.sigma[:n]
    G = _path(truth.duration, n, ())
    U = _path(truth.noise_cov, n, (d, d)) * _path(truth.overlap_limit, n, (d, d))

    t1 = _pair_sym(np.einsum("t,tac,tbd->abcd", dt * G, S, S))
    t2 = _pair_sym(np.einsum("t,tac,tbd->abcd", dt / G, U, U))
    w = dt
    t3 = (
        np.einsum("t,tac,tbd->abcd", w, S, U)
        + np.einsum("t,tbc,tad->abcd", w, S, U)
        + np.einsum("t,tbd,tac->abcd", w, S, U)
        + np.einsum("t,tad,tbc->abcd", w, S, U)
    )
    out = (2.0 / wc.psi2**2) * (wc.phi22 * theta * t1 + wc.phi11 / theta**3 * t2 + wc.phi12 / theta * t3)
    return out


def avar_jump(truth: GroundTruth, theta: float, wc: WeightConstants) -> np.ndarray:
    """Jump-part covariance tensor, a sum of two-sided spot quantities over jumps.

    For each jump with vector dx, form the matrix

        j^{kl} = dx^k dx^l {Phi22 theta (S_-^{kl} G_- + S_+^{kl} G_+)
                            + Phi12/theta (U_-^{kl} + U_+^{kl})}

    and accumulate (j^{kk'} + j^{kl'} + j^{lk'} + j^{ll'}) / psi2^2.
    """
    if theta <= 0:
        raise InvalidParameterError(f"theta must be positive, got {theta}")
    d = truth.n_assets
    out = np.zeros((d, d, d, d))
    ups = np.asarray(truth.noise_cov, dtype=float)
    for rec in truth.jumps:
        dx = np.asarray(rec.dx, dtype=float)
        if ups.ndim == 3:  # time-varying noise: sample at the jump's grid sides
            i = max(np.searchsorted(truth.times, rec.time, side="left") - 1, 0)
            u_left, u_right = ups[i], ups[min(i + 1, len(ups) - 1)]
        else:
            u_left = u_right = ups
        j = np.outer(dx, dx) * (
            wc.phi22 * theta * (rec.sigma_left * rec.g_left + rec.sigma_right * rec.g_right)
            + wc.phi12 / theta * (u_left * rec.chi_left + u_right * rec.chi_right)
        )
        out += (
            j[:, None, :, None] + j[:, None, None, :] + j[None, :, :, None] + j[None, :, None, :]
        )
    return out / wc.psi2**2


def asymptotic_covariance(truth: GroundTruth, theta: float, wc: WeightConstants) -> AvarResult:
    """Both parts of the asymptotic covariance tensor."""
    return AvarResult(
        continuous=avar_continuous(truth, theta, wc),
        jump=avar_jump(truth, theta, wc),
    )


def standardize(
    estimate: MrcEstimate,
    truth: GroundTruth,
    avar: AvarResult,
    n: int,
    k: int,
    l: int,
) -> float:
    """The infeasible standardized statistic n^{1/4} (estimate - truth) / sqrt(avar)."""
    var = avar.variance(k, l)
    if var <= 0:
        raise DegenerateVarianceError(
            f"asymptotic variance of entry ({k}, {l}) is {var!r}; cannot standardize"
        )
    dev = estimate.mrc[k, l] - truth.true_qv[k, l]
    return float(n**0.25 * dev / math.sqrt(var))


def _inclusion_exclusion(weights_fn, d: int) -> float:
    total = 0.0
    for size in range(1, d + 1):
        for subset in itertools.combinations(range(d), size):
            total += (-1) ** (size - 1) / weights_fn(subset)
    return total


def scheme_g_chi(scheme, d: Optional[int] = None) -> tuple[float, np.ndarray]:
    """Closed-form duration limit G and overlap limit chi for standard schemes.

    - Poisson arrivals with rate fractions p_k: inclusion-exclusion G and
      identity chi (independent arrival streams never coincide).
    - A latent grid observed through independent geometric thinning with
      probabilities p_k: G scales the latent duration limit by the
      inclusion-exclusion factor over joint observation probabilities;
      chi^{kl} = p_k p_l / (p_k + p_l - p_k p_l) off the diagonal.
    - Synchronous (unthinned) grids: G is the latent duration limit and
      chi is all ones.
    """
    kind = scheme.kind
    thinning = scheme.thinning
    if kind == "poisson":
        if not thinning:
            raise NotApplicableError("poisson scheme needs per-asset rate fractions")
        p = np.asarray(thinning, dtype=float)
        g = _inclusion_exclusion(lambda sub: float(p[list(sub)].sum()), len(p))
        return g, np.eye(len(p))
    if kind == "equidistant":
        g0 = 1.0
    elif kind == "ig_hitting":
        g0 = scheme.ig_b / scheme.ig_a
    elif kind == "alternating":
        # the shifted equidistant grid is a valid synchronization of this scheme
        return 1.0, np.ones((1, 1))
    else:
        raise NotApplicableError(f"no closed-form duration limit for scheme kind {kind!r}")
    if thinning is None:
        if d is None:
            raise InvalidParameterError("pass the number of assets for an unthinned scheme")
        return g0, np.ones((d, d))
    p = np.asarray(thinning, dtype=float)
    g = g0 * _inclusion_exclusion(lambda sub: 1.0 - float(np.prod(1.0 - p[list(sub)])), len(p))
    chi = np.eye(len(p))
    for k in range(len(p)):
        for l in range(k + 1, len(p)):
            chi[k, l] = chi[l, k] = p[k] * p[l] / (p[k] + p[l] - p[k] * p[l])
    return g, chi
