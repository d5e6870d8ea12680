"""Ground-truth simulation: jump-diffusion paths, observation times, noise.

The latent price is a bivariate stochastic-volatility model with
square-root variance dynamics, compensated compound-Poisson variance
jumps and tempered-stable price jumps:

    dX^k = sigma_k dW^k + dZ^k
    d(sigma_k^2) = kappa_k (sbar_k^2 - sigma_k^2) dt + s_k sigma_k dB^k
                   + dJ^k - lam_k tau_k dt

with corr(W^1, W^2) = rho_w, corr(W^k, B^k) = leverage_k, all other
cross-correlations zero.  The variance recursion uses full truncation:
negative excursions of the state are floored at zero inside drift,
diffusion and the reported variance path.

Observation times come from an equidistant or barrier-hitting latent
grid, optionally thinned per asset by independent geometric gaps; the
hitting scheme reconstructs the first Brownian driver exactly from the
barrier identity, making the times endogenous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .avar import GroundTruth, JumpRecord, scheme_g_chi
from .errors import InvalidParameterError

DEFAULT_TRUNC_EPS = 1e-5


@dataclass(frozen=True)
class HestonParams:
    """Bivariate stochastic-volatility parameters (one entry per asset)."""

    kappa: tuple = (5.0, 4.0)
    vol_of_vol: tuple = (0.3, 0.4)
    sigma_bar: tuple = (0.25, 0.3)
    leverage: tuple = (-0.6, -0.75)
    vol_jump_intensity: tuple = (5.0, 10.0)
    vol_jump_mean: tuple = (0.05, 0.01)
    brownian_corr: float = 0.5

    def __post_init__(self):
        for name in ("kappa", "vol_of_vol", "sigma_bar", "vol_jump_intensity", "vol_jump_mean"):
            if min(getattr(self, name)) < 0:
                raise InvalidParameterError(f"{name} entries must be non-negative")
        if max(abs(r) for r in self.leverage) > 1 or abs(self.brownian_corr) > 1:
            raise InvalidParameterError("correlation magnitudes must not exceed 1")
        correlation_factor(self)  # PSD check

    def correlation_matrix(self) -> np.ndarray:
        r1, r2 = self.leverage
        rb = self.brownian_corr
        return np.array(
            [
                [1.0, rb, r1, 0.0],
                [rb, 1.0, 0.0, r2],
                [r1, 0.0, 1.0, 0.0],
                [0.0, r2, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CgmyParams:
    """Two tempered-stable jump drivers combined linearly across assets.

    The first asset's jumps are the first driver's; the second asset
    receives jump_corr times the first driver plus sqrt(1 - jump_corr^2)
    times the second.  Only the finite-variation regime (beta < 1) is
    supported: those processes are exactly simulable jump by jump.
    """

    c1: float = 0.0
    c0: float = 0.0
    gamma_plus: float = 3.0
    gamma_minus: float = 5.0
    beta: float = 0.5
    jump_corr: float = 0.2
    trunc_eps: float = DEFAULT_TRUNC_EPS

    def __post_init__(self):
        if self.c1 < 0 or self.c0 < 0:
            raise InvalidParameterError("jump intensities c1, c0 must be non-negative")
        if self.gamma_plus <= 0 or self.gamma_minus <= 0:
            raise InvalidParameterError("tempering rates must be positive")
        if not 0.0 < self.beta < 1.0:
            raise InvalidParameterError(
                f"only the finite-variation regime beta in (0, 1) is supported, got {self.beta}"
            )
        if abs(self.jump_corr) > 1:
            raise InvalidParameterError("jump correlation must lie in [-1, 1]")
        if self.trunc_eps <= 0:
            raise InvalidParameterError("jump-size truncation must be positive")


@dataclass(frozen=True)
class SamplingSchemeSpec:
    """Observation-time generator: latent grid kind plus optional thinning."""

    kind: str = "equidistant"  # equidistant | ig_hitting | poisson | alternating
    n: int = 23400
    thinning: Optional[tuple] = None
    alpha: Optional[float] = None
    ig_a: float = 2.0
    ig_b: float = 2.0

    def __post_init__(self):
        if self.kind not in ("equidistant", "ig_hitting", "poisson", "alternating"):
            raise InvalidParameterError(f"unknown sampling scheme kind {self.kind!r}")
        if self.n < 1:
            raise InvalidParameterError("n must be at least 1")
        if self.thinning is not None:
            if any(not 0.0 < p <= 1.0 for p in self.thinning):
                raise InvalidParameterError("observation probabilities must lie in (0, 1]")
            if self.kind == "alternating":
                raise InvalidParameterError("the alternating grid is a single-asset scheme")
        if self.kind == "alternating" and not (self.alpha is not None and 0.0 < self.alpha < 1.0):
            raise InvalidParameterError("alternating grid needs an offset alpha in (0, 1)")
        if self.kind == "ig_hitting" and (self.ig_a <= 0 or self.ig_b <= 0):
            raise InvalidParameterError("hitting barrier constants must be positive")


@dataclass(frozen=True)
class SampledTimes:
    """Latent grid, per-asset observed indices into it, and the reconstructed driver."""

    latent: np.ndarray
    observed: tuple
    w1_increments: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CgmyJumps:
    """Jump times/sizes of the two drivers and the combined per-asset jump vectors."""

    z1_times: np.ndarray
    z1_sizes: np.ndarray
    z0_times: np.ndarray
    z0_sizes: np.ndarray
    times: np.ndarray
    sizes: np.ndarray  # (n_jumps, 2) per-asset jump vectors, sorted by time


@dataclass(frozen=True)
class SimOutput:
    """One simulated market: latent paths, ticks, jumps and assembled ground truth."""

    latent_times: np.ndarray
    x: np.ndarray
    x_cont: np.ndarray
    sigma2: np.ndarray
    vol_jump_times: tuple
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    tick_indices: tuple
    tick_times: tuple
    tick_values: tuple
    truth: GroundTruth


def correlation_factor(h: HestonParams) -> np.ndarray:
    """A 4x4 factor L with L L^T equal to the driver correlation matrix.

    Lower-triangular (Cholesky) when the matrix is definite; an
    eigenvalue-based factor on the semidefinite boundary.
    """
    corr = h.correlation_matrix()
    eig = np.linalg.eigvalsh(corr)
    if eig.min() < -1e-10:
        raise InvalidParameterError(
            f"implied driver correlation matrix is not positive semidefinite (min eigenvalue {eig.min():.3e})"
        )
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(corr)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


@njit(cache=True)
def _euler_kernel(dt, dw, db, dvj, kappa, sbar2, vol_of_vol, comp, v0):
    m = dt.shape[0]
    x = np.zeros((m + 1, 2))
    v_used = np.empty((m + 1, 2))
    v = v0.copy()
    for k in range(2):
        v_used[0, k] = v[k] if v[k] > 0.0 else 0.0
    for i in range(m):
        for k in range(2):
            vp = v[k] if v[k] > 0.0 else 0.0
            sig = math.sqrt(vp)
            x[i + 1, k] = x[i, k] + sig * dw[i, k]
            v[k] = (
                v[k]
                + (kappa[k] * (sbar2[k] - vp) - comp[k]) * dt[i]
                + vol_of_vol[k] * sig * db[i, k]
                + dvj[i, k]
            )
            v_used[i + 1, k] = v[k] if v[k] > 0.0 else 0.0
    return x, v_used


def _compound_poisson_cells(latent, intensity, size_upper, rng):
    """Uniform-size compound Poisson jump mass mapped to grid cells."""
    horizon = latent[-1] - latent[0]
    m = len(latent) - 1
    out = np.zeros(m)
    count = rng.poisson(intensity * horizon)
    times = np.sort(rng.uniform(latent[0], latent[-1], count))
    sizes = rng.uniform(0.0, size_upper, count)
    if count:
        cells = np.clip(np.searchsorted(latent, times, side="left") - 1, 0, m - 1)
        np.add.at(out, cells, sizes)
    return out, times


def simulate_heston(
    h: HestonParams,
    latent_times: np.ndarray,
    rng: np.random.Generator,
    w1_increments: Optional[np.ndarray] = None,
):
    """Euler path of the continuous price components and variance paths.

    Returns (x_cont, sigma2, vol_jump_times): the diffusion price parts
    (m+1, 2), the truncated variance paths (m+1, 2) and the per-asset
    variance jump times.  When `w1_increments` is given (endogenous
    sampling), the first driver is fixed and the remaining drivers are
    drawn from their conditional law through the correlation factor.
    """
    latent = np.asarray(latent_times, dtype=float)
    if latent.ndim != 1 or len(latent) < 2 or np.any(np.diff(latent) <= 0):
        raise InvalidParameterError("latent times must be a strictly increasing 1-d grid")
    m = len(latent) - 1
    dt = np.diff(latent)
    sqdt = np.sqrt(dt)
    L = correlation_factor(h)
    z = np.empty((m, 4))
    if w1_increments is None:
        z[:] = rng.standard_normal((m, 4))
    else:
        w1 = np.asarray(w1_increments, dtype=float)
        if w1.shape != (m,):
            raise InvalidParameterError("driver increments must align with the latent grid")
        if abs(L[0, 0] - 1.0) > 1e-12 or np.any(np.abs(L[0, 1:]) > 1e-12):
            raise InvalidParameterError(
                "endogenous sampling needs a triangular correlation factor; "
                "the driver correlation matrix is singular"
            )
        z[:, 0] = w1 / sqdt
        z[:, 1:] = rng.standard_normal((m, 3))
    drivers = (z @ L.T) * sqdt[:, None]  # columns: W1, W2, B1, B2

    dvj = np.zeros((m, 2))
    vol_jump_times = []
    for k in range(2):
        cells, times = _compound_poisson_cells(
            latent, h.vol_jump_intensity[k], 2.0 * h.vol_jump_mean[k], rng
        )
        dvj[:, k] = cells
        vol_jump_times.append(times)

    sbar2 = np.array([s**2 for s in h.sigma_bar])
    comp = np.array([h.vol_jump_intensity[k] * h.vol_jump_mean[k] for k in range(2)])
    x_cont, sigma2 = _euler_kernel(
        dt,
        np.ascontiguousarray(drivers[:, :2]),
        np.ascontiguousarray(drivers[:, 2:]),
        dvj,
        np.asarray(h.kappa, dtype=float),
        sbar2,
        np.asarray(h.vol_of_vol, dtype=float),
        comp,
        sbar2.copy(),
    )
    return x_cont, sigma2, tuple(vol_jump_times)


def qv_moment_factor(gamma_plus: float, gamma_minus: float, beta: float) -> float:
    """Second moment of the two-sided tempered-stable density per unit intensity."""
    return math.gamma(2.0 - beta) * (gamma_plus ** (beta - 2.0) + gamma_minus ** (beta - 2.0))


def calibrate_c(
    target_share: float,
    sigma_bar: float,
    gamma_plus: float,
    gamma_minus: float,
    beta: float,
) -> float:
    """Jump intensity c making jumps contribute `target_share` of expected quadratic variation.

    Solves share = E[jump QV] / (sigma_bar^2 + E[jump QV]) with
    E[jump QV] = c Gamma(2-beta) (gamma_plus^{beta-2} + gamma_minus^{beta-2}).
    """
    if not 0.0 <= target_share < 1.0:
        raise InvalidParameterError(f"jump share must lie in [0, 1), got {target_share}")
    return (target_share / (1.0 - target_share)) * sigma_bar**2 / qv_moment_factor(
        gamma_plus, gamma_minus, beta
    )


def calibrate_jump_pair(
    target_share: float,
    sigma_bars: Sequence[float],
    jump_corr: float,
    gamma_plus: float = 3.0,
    gamma_minus: float = 5.0,
    beta: float = 0.5,
    trunc_eps: float = DEFAULT_TRUNC_EPS,
) -> CgmyParams:
    """Calibrate both driver intensities so each asset carries the target QV share.

    The second asset's jump QV is jump_corr^2 times the first driver's
    plus (1 - jump_corr^2) times the second driver's, which pins c0 once
    c1 is fixed.
    """
    factor = qv_moment_factor(gamma_plus, gamma_minus, beta)
    c1 = calibrate_c(target_share, sigma_bars[0], gamma_plus, gamma_minus, beta)
    if abs(jump_corr) == 1.0:
        c0 = 0.0
    else:
        target2 = (target_share / (1.0 - target_share)) * sigma_bars[1] ** 2
        qv0 = (target2 - jump_corr**2 * c1 * factor) / (1.0 - jump_corr**2)
        if qv0 < 0:
            raise InvalidParameterError("jump correlation too large for the requested shares")
        c0 = qv0 / factor
    return CgmyParams(
        c1=c1, c0=c0, gamma_plus=gamma_plus, gamma_minus=gamma_minus,
        beta=beta, jump_corr=jump_corr, trunc_eps=trunc_eps,
    )


def _one_sided_jumps(c, gamma, beta, eps, horizon, rng):
    """Jump times and magnitudes >= eps of a one-sided tempered-stable tail.

    Proposes from the un-tempered stable tail (mass c eps^-beta / beta,
    magnitudes eps * U^{-1/beta}) and keeps each proposal with probability
    exp(-gamma * magnitude).
    """
    if c == 0.0:
        return np.empty(0), np.empty(0)
    mass = c * eps ** (-beta) / beta
    count = rng.poisson(mass * horizon)
    times = rng.uniform(0.0, horizon, count)
    mags = eps * rng.uniform(size=count) ** (-1.0 / beta)
    keep = rng.uniform(size=count) <= np.exp(-gamma * mags)
    return times[keep], mags[keep]


def simulate_cgmy(p: CgmyParams, horizon: float, rng: np.random.Generator) -> CgmyJumps:
    """Exact jump records of both drivers and the combined per-asset jump vectors.

    Jumps below the size truncation are discarded; their quadratic-variation
    contribution is O(eps^{2-beta}) and negligible at the default truncation.
    """
    parts = []
    for c in (p.c1, p.c0):
        tp, mp = _one_sided_jumps(c, p.gamma_plus, p.beta, p.trunc_eps, horizon, rng)
        tm, mm = _one_sided_jumps(c, p.gamma_minus, p.beta, p.trunc_eps, horizon, rng)
        t = np.concatenate([tp, tm])
        s = np.concatenate([mp, -mm])
        order = np.argsort(t, kind="stable")
        parts.append((t[order], s[order]))
    (t1, s1), (t0, s0) = parts

    rho = p.jump_corr
    cross = math.sqrt(max(0.0, 1.0 - rho**2))
    vec1 = np.column_stack([s1, rho * s1])
    vec0 = np.column_stack([np.zeros_like(s0), cross * s0])
    times = np.concatenate([t1, t0])
    sizes = np.vstack([vec1, vec0])
    keep = np.any(sizes != 0.0, axis=1)
    times, sizes = times[keep], sizes[keep]
    order = np.argsort(times, kind="stable")
    return CgmyJumps(
        z1_times=t1, z1_sizes=s1, z0_times=t0, z0_sizes=s0,
        times=times[order], sizes=sizes[order],
    )


def _thinned_indices(n_latent: int, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Indices {0} + cumulative geometric gaps, cut at the end of the grid."""
    if prob >= 1.0:
        return np.arange(n_latent)
    out = [np.zeros(1, dtype=np.int64)]
    pos = 0
    while pos < n_latent - 1:
        batch = max(64, int((n_latent - 1 - pos) * prob + 6 * math.sqrt(n_latent * prob) + 16))
        gaps = rng.geometric(prob, size=batch)
        idx = pos + np.cumsum(gaps)
        out.append(idx)
        pos = int(idx[-1])
    idx = np.concatenate(out)
    return idx[idx <= n_latent - 1]


def sample_times(
    scheme: SamplingSchemeSpec,
    horizon: float,
    rng: np.random.Generator,
    d: Optional[int] = None,
) -> SampledTimes:
    """Latent grid and per-asset observed indices for a sampling scheme.

    For the hitting scheme the durations are inverse Gaussian with mean
    (b/a)/n and shape b^2/n, and the first Brownian driver is recovered
    exactly from the barrier identity  dW = a sqrt(n) dt - b / sqrt(n).
    """
    n = scheme.n
    w1 = None
    if scheme.kind == "equidistant":
        latent = np.arange(n + 1) / n * horizon
    elif scheme.kind == "ig_hitting":
        mu = (scheme.ig_b / scheme.ig_a) / n
        lam = scheme.ig_b**2 / n
        chunks = []
        total = 0.0
        while total < horizon:
            need = max(64, int((horizon - total) / mu * 1.05 + 6 * math.sqrt(horizon / mu) + 16))
            draw = rng.wald(mu, lam, size=need)
            chunks.append(draw)
            total += float(draw.sum())
        dur = np.concatenate(chunks)
        cum = np.cumsum(dur)
        keep = cum <= horizon
        dur = dur[keep]
        latent = np.concatenate([[0.0], cum[keep]])
        w1 = scheme.ig_a * math.sqrt(n) * dur - scheme.ig_b / math.sqrt(n)
    elif scheme.kind == "alternating":
        i = np.arange(n + 2)
        t = (i + scheme.alpha * (i % 2)) / n
        latent = t[t <= horizon]
        return SampledTimes(latent=latent, observed=(np.arange(len(latent)),))
    elif scheme.kind == "poisson":
        if not scheme.thinning:
            raise InvalidParameterError("poisson scheme needs per-asset rate fractions")
        asset_times = []
        for p in scheme.thinning:
            rate = n * p
            chunks, total = [], 0.0
            while total < horizon:
                need = max(64, int((horizon - total) * rate * 1.05 + 6 * math.sqrt(horizon * rate) + 16))
                draw = rng.exponential(1.0 / rate, size=need)
                chunks.append(draw)
                total += float(draw.sum())
            cum = np.cumsum(np.concatenate(chunks))
            asset_times.append(cum[cum <= horizon])
        latent = np.unique(np.concatenate([[0.0]] + asset_times))
        observed = tuple(np.searchsorted(latent, t) for t in asset_times)
        return SampledTimes(latent=latent, observed=observed)
    else:  # pragma: no cover - guarded by the dataclass validator
        raise InvalidParameterError(f"unknown scheme kind {scheme.kind!r}")

    if scheme.thinning is not None:
        observed = tuple(_thinned_indices(len(latent), p, rng) for p in scheme.thinning)
    else:
        if d is None:
            raise InvalidParameterError("pass the number of assets for an unthinned scheme")
        observed = tuple(np.arange(len(latent)) for _ in range(d))
    return SampledTimes(latent=latent, observed=observed, w1_increments=w1)


def add_noise(values, sd: float, rng: np.random.Generator):
    """Observed values: latent values plus i.i.d. centered Gaussian noise per tick."""
    if sd < 0:
        raise InvalidParameterError("noise standard deviation must be non-negative")
    if isinstance(values, np.ndarray):
        return values + rng.normal(0.0, sd, size=values.shape)
    return tuple(v + rng.normal(0.0, sd, size=len(v)) for v in values)


def _sigma_path(h: HestonParams, sigma2: np.ndarray) -> np.ndarray:
    """Spot covariance path (m+1, 2, 2) from the variance paths."""
    s1 = np.sqrt(sigma2[:, 0])
    s2 = np.sqrt(sigma2[:, 1])
    out = np.empty((len(sigma2), 2, 2))
    out[:, 0, 0] = sigma2[:, 0]
    out[:, 1, 1] = sigma2[:, 1]
    out[:, 0, 1] = out[:, 1, 0] = h.brownian_corr * s1 * s2
    return out


def simulate_paths(
    heston: HestonParams,
    cgmy: CgmyParams,
    scheme: SamplingSchemeSpec,
    noise_sd: float,
    rng: np.random.Generator,
    horizon: float = 1.0,
) -> SimOutput:
    """One full simulated market with its assembled ground truth.

    Draw order is fixed (times, thinning, price jumps, diffusion drivers,
    variance jumps, then noise asset by asset), so output is a pure
    function of the generator state.
    """
    st = sample_times(scheme, horizon, rng, d=2)
    if len(st.observed) != 2:
        raise InvalidParameterError("path simulation is bivariate; scheme must yield 2 assets")
    latent = st.latent
    m = len(latent) - 1
    jumps = simulate_cgmy(cgmy, horizon, rng)
    x_cont, sigma2, vol_jump_times = simulate_heston(heston, latent, rng, st.w1_increments)

    dz = np.zeros((m, 2))
    cells = np.clip(np.searchsorted(latent, jumps.times, side="left") - 1, 0, m - 1)
    if len(jumps.times):
        np.add.at(dz, cells, jumps.sizes)
    x = x_cont.copy()
    x[1:] += np.cumsum(dz, axis=0)

    tick_values = []
    for k in range(2):
        vals = x[st.observed[k], k]
        tick_values.append(add_noise(vals, noise_sd, rng))

    sig = _sigma_path(heston, sigma2)
    dt = np.diff(latent)
    true_qv = np.einsum("t,tkl->kl", dt, sig[:-1])
    g_limit, chi = scheme_g_chi(scheme, d=2)
    records = []
    if len(jumps.times):
        for t, dx, i in zip(jumps.times, jumps.sizes, cells):
            true_qv += np.outer(dx, dx)
            records.append(
                JumpRecord(
                    time=float(t),
                    dx=dx,
                    sigma_left=sig[i],
                    sigma_right=sig[i + 1],
                    g_left=g_limit,
                    g_right=g_limit,
                    chi_left=chi,
                    chi_right=chi,
                )
            )
    truth = GroundTruth(
        times=latent,
        sigma=sig,
        duration=g_limit,
        overlap_limit=chi,
        noise_cov=noise_sd**2 * np.eye(2),
        jumps=tuple(records),
        true_qv=true_qv,
    )
    return SimOutput(
        latent_times=latent,
        x=x,
        x_cont=x_cont,
        sigma2=sigma2,
        vol_jump_times=vol_jump_times,
        jump_times=jumps.times,
        jump_sizes=jumps.sizes,
        tick_indices=st.observed,
        tick_times=tuple(latent[idx] for idx in st.observed),
        tick_values=tuple(tick_values),
        truth=truth,
    )
