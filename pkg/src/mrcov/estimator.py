"""Pre-averaged covariance estimation with noise bias correction.

The estimator forms local weighted averages of observation increments
over a window of k_n grid slots, sums their outer products, and removes
the noise-induced bias with a realized-covariance correction term:

    MRC = 1/(psi2 k_n) sum_i  ybar_i ybar_i^T
          - psi1/(2 psi2 k_n^2) * sum_p  dy_p dy_p^T

With the default finite-sample convention, psi1/psi2 are replaced by
their discrete window versions.  No positive-semidefinite projection is
applied: the correction can push small eigenvalues negative and the raw
statistic is what the distribution theory concerns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InsufficientDataError, InvalidParameterError
from .ticks import SyncGrid, TickSeries, refresh_times
from .weights import WeightConstants, WeightProfile, discrete_weights, min_max_profile, weight_constants


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator knobs: window scale theta, optional fixed window, weights."""

    theta: float = 1.0
    window_override: Optional[int] = None
    profile: WeightProfile = field(default_factory=min_max_profile)
    finite_sample_psis: bool = True

    def __post_init__(self):
        if self.theta <= 0:
            raise InvalidParameterError(f"theta must be positive, got {self.theta}")
        if self.window_override is not None and self.window_override < 2:
            raise InvalidParameterError("window override must be at least 2")


@dataclass(frozen=True)
class MrcEstimate:
    """Estimation output: corrected matrix, raw realized covariance, window metadata."""

    mrc: np.ndarray
    rcov: np.ndarray
    k_n: int
    n_preavg_blocks: int
    psis_used: WeightConstants

    def __post_init__(self):
        for name in ("mrc", "rcov"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, rtol=1e-12, atol=1e-300):
                raise InvalidParameterError(f"{name} matrix is not symmetric")
        if np.any(np.diag(self.rcov) < 0):
            raise InvalidParameterError("realized covariance diagonal must be non-negative")


def window_size(theta: float, n_obs: int) -> int:
    """Window length ceil(theta * sqrt(n_obs)), clamped below at 2."""
    if n_obs < 1:
        raise InsufficientDataError("need at least one observation increment to size the window")
    if theta <= 0:
        raise InvalidParameterError(f"theta must be positive, got {theta}")
    # guard against float fuzz pushing an exact integer over the next ceiling
    return max(2, math.ceil(theta * math.sqrt(n_obs) - 1e-12))


def preaverage(grid: SyncGrid, k_n: int, profile: WeightProfile) -> np.ndarray:
    """Weighted local averages ybar_i of the grid increments, shape (N-k_n+2, d).

    ybar_i^k = sum_{p=1}^{k_n-1} g(p/k_n) (y^k_{i+p} - y^k_{i+p-1}), i = 0..N-k_n+1.
    """
    n = grid.n_increments
    if n < k_n - 1:
        raise InsufficientDataError(
            f"grid has {n} increments; need at least k_n - 1 = {k_n - 1}"
        )
    w = discrete_weights(profile, k_n)[1:]  # interior weights, p = 1..k_n-1
    incr = grid.increments()
    # correlate(a, w)[i] = sum_q a[i+q] w[q], i.e. weights in natural order
    return np.column_stack([np.correlate(incr[:, k], w, mode="valid") for k in range(grid.n_assets)])


def realized_cov(grid: SyncGrid) -> np.ndarray:
    """Realized covariance of the synchronized increments, sum_p dy_p dy_p^T."""
    incr = grid.increments()
    return incr.T @ incr


def mrc(grid: SyncGrid, config: EstimatorConfig = EstimatorConfig()) -> MrcEstimate:
    """The bias-corrected pre-averaged covariance estimate on a synchronized grid."""
    n = grid.n_increments
    k_n = config.window_override if config.window_override is not None else window_size(config.theta, n)
    if n < k_n - 1:
        raise InsufficientDataError(
            f"grid has {n} increments; need at least k_n - 1 = {k_n - 1}"
        )
    wc = weight_constants(config.profile, k_n)
    psi1, psi2 = (wc.psi1_disc, wc.psi2_disc) if config.finite_sample_psis else (wc.psi1, wc.psi2)
    bars = preaverage(grid, k_n, config.profile)
    signal = bars.T @ bars / (psi2 * k_n)
    rcov = realized_cov(grid)
    est = signal - psi1 / (2.0 * psi2 * k_n**2) * rcov
    est = 0.5 * (est + est.T)  # exact symmetry; summands are symmetric up to rounding
    return MrcEstimate(mrc=est, rcov=rcov, k_n=k_n, n_preavg_blocks=bars.shape[0], psis_used=wc)


def as_sync_grid(X) -> SyncGrid:
    """Normalize estimator input to a SyncGrid.

    Accepts a SyncGrid, a sequence of TickSeries (synchronized by refresh
    times), or a 2-d array of synchronous prices with rows as consecutive
    observation times and columns as assets.
    """
    if isinstance(X, SyncGrid):
        return X
    if isinstance(X, (list, tuple)) and X and all(isinstance(s, TickSeries) for s in X):
        return refresh_times(X)
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise InvalidParameterError(
            "expected a SyncGrid, a sequence of TickSeries, or a 2-d price array with >= 2 rows"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("price array contains non-finite values")
    t = np.arange(arr.shape[0], dtype=float)
    tau = np.broadcast_to(t[:, None], arr.shape).copy()
    ids = tuple(f"a{k + 1}" for k in range(arr.shape[1]))
    return SyncGrid(refresh_times=t, tau=tau, values=arr, asset_ids=ids)


class MrcCovariance(BaseEstimator):
    """Noise-robust covariance estimator for irregular, non-synchronous ticks.

    Parameters
    ----------
    theta : float, default 1.0
        Window scale; the pre-averaging window is ceil(theta * sqrt(N))
        for N synchronized increments.
    window : int, optional
        Fixed window length overriding the theta rule.
    weights : "minmax" or WeightProfile, default "minmax"
        Pre-averaging weight function.
    finite_sample : bool, default True
        Use the discrete window constants instead of their limits.

    Attributes (after ``fit``)
    --------------------------
    covariance_ : ndarray (d, d)
        Bias-corrected covariance estimate.
    rcov_ : ndarray (d, d)
        Uncorrected realized covariance on the synchronized grid.
    window_ : int
        Pre-averaging window actually used.
    n_refresh_ : int
        Number of synchronized increments.
    grid_ : SyncGrid
        The synchronized grid the estimate was computed on.
    estimate_ : MrcEstimate
        Full estimation record, including the weight constants used.

    Examples
    --------
    >>> import numpy as np
    >>> prices = np.cumsum(np.random.default_rng(0).normal(size=(500, 2)), axis=0)
    >>> est = MrcCovariance(theta=0.5).fit(prices)
    >>> est.covariance_.shape
    (2, 2)
    """

    def __init__(self, theta=1.0, window=None, weights="minmax", finite_sample=True):
        self.theta = theta
        self.window = window
        self.weights = weights
        self.finite_sample = finite_sample

    def _profile(self) -> WeightProfile:
        if isinstance(self.weights, WeightProfile):
            return self.weights
        if self.weights == "minmax":
            return min_max_profile()
        raise InvalidParameterError(
            f"weights must be 'minmax' or a WeightProfile, got {self.weights!r}"
        )

    def fit(self, X, y=None):
        grid = as_sync_grid(X)
        config = EstimatorConfig(
            theta=self.theta,
            window_override=self.window,
            profile=self._profile(),
            finite_sample_psis=self.finite_sample,
        )
        est = mrc(grid, config)
        self.grid_ = grid
        self.estimate_ = est
        self.covariance_ = est.mrc
        self.rcov_ = est.rcov
        self.window_ = est.k_n
        self.n_refresh_ = grid.n_increments
        return self
