"""Tick-series containers and refresh-time synchronization.

Synchronization follows the refresh-time rule: the grid advances to the
first time at which every asset has traded again, and each asset is
interpolated to its own next tick after the previous grid time.  Overlap
indicators use bitwise float equality on timestamps: two assets share a
grid slot only when their interpolated ticks are literally the same time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidParameterError, TickParseError


@dataclass(frozen=True)
class TickSeries:
    """One asset's observation times and values."""

    asset_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if not self.asset_id:
            raise InvalidParameterError("asset id must be non-empty")
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise InvalidParameterError("times and values must be 1-d arrays of equal length")
        if len(self.times) < 2:
            raise InsufficientDataError(
                f"asset {self.asset_id!r} has {len(self.times)} tick(s); need at least 2"
            )
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError(f"times of asset {self.asset_id!r} must increase strictly")

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class SyncGrid:
    """Refresh times with per-asset interpolated times and values.

    Rows are grid slots p = 0..N; `tau[p, k]` is asset k's own tick used at
    slot p and `values[p, k]` the corresponding observation.
    """

    refresh_times: np.ndarray
    tau: np.ndarray
    values: np.ndarray
    asset_ids: tuple = ()

    def __post_init__(self):
        T = np.asarray(self.refresh_times, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "refresh_times", T)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", vals)
        if tau.ndim != 2 or tau.shape != vals.shape or tau.shape[0] != len(T):
            raise InvalidParameterError("tau/values must be (n_slots, n_assets) aligned with refresh_times")
        if len(T) < 1:
            raise InsufficientDataError("empty synchronized grid")
        if np.any(np.diff(T) <= 0):
            raise InvalidParameterError("refresh times must increase strictly")
        # condition (H1): tau_0 <= T_0 and T_{p-1} < tau_p <= T_p
        if np.any(self.tau[0] > T[0]):
            raise InvalidParameterError("initial interpolated times exceed the first refresh time")
        if len(T) > 1:
            if np.any(tau[1:] > T[1:, None]) or np.any(tau[1:] <= T[:-1, None]):
                raise InvalidParameterError("interpolated times violate the refresh bracketing")

    @property
    def n_assets(self) -> int:
        return self.tau.shape[1]

    @property
    def n_increments(self) -> int:
        return len(self.refresh_times) - 1

    @property
    def overlap(self) -> np.ndarray:
        """Boolean (n_slots, d, d): exact per-slot timestamp coincidence."""
        return self.tau[:, :, None] == self.tau[:, None, :]

    def increments(self) -> np.ndarray:
        """Per-asset observation increments along the grid, shape (N, d)."""
        return np.diff(self.values, axis=0)


_HEADER = ("asset", "timestamp", "price")


def parse_ticks(stream) -> list[TickSeries]:
    """Parse long-format tick CSV (`asset,timestamp,price`, header required).

    Returns one TickSeries per distinct asset, in first-appearance order.
    Rows of one asset must appear in strictly increasing time order.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise TickParseError("empty input; expected header 'asset,timestamp,price'", line=1)
    if tuple(h.strip().lower() for h in header) != _HEADER:
        raise TickParseError(
            f"expected header 'asset,timestamp,price', got {','.join(header)!r}", line=1
        )
    times: dict[str, list] = {}
    values: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise TickParseError(f"expected 3 fields, got {len(row)}", line=lineno)
        asset = row[0].strip()
        if not asset:
            raise TickParseError("empty asset id", line=lineno)
        try:
            t = float(row[1])
            p = float(row[2])
        except ValueError:
            raise TickParseError(f"non-numeric timestamp or price in {row!r}", line=lineno)
        ts = times.setdefault(asset, [])
        if ts:
            if t == ts[-1]:
                raise TickParseError(f"duplicate timestamp {row[1]} for asset {asset!r}", line=lineno)
            if t < ts[-1]:
                raise TickParseError(
                    f"timestamps of asset {asset!r} not increasing ({row[1]} after {ts[-1]})",
                    line=lineno,
                )
        ts.append(t)
        values.setdefault(asset, []).append(p)
    if not times:
        raise TickParseError("no data rows found")
    return [TickSeries(a, times[a], values[a]) for a in times]


def refresh_times(series: Sequence[TickSeries]) -> SyncGrid:
    """Synchronize tick series on the refresh-time grid.

    The grid starts at the last of the first ticks and stops as soon as
    some asset has no tick strictly after the current refresh time.
    """
    d = len(series)
    if d < 1:
        raise InvalidParameterError("need at least one tick series")
    for s in series:
        if len(s) < 2:
            raise InsufficientDataError(f"asset {s.asset_id!r} has fewer than 2 ticks")
    t_lists = [s.times.tolist() for s in series]
    v_lists = [s.values.tolist() for s in series]
    lens = [len(t) for t in t_lists]

    tau_rows = [[t[0] for t in t_lists]]
    val_rows = [[v[0] for v in v_lists]]
    T = max(tau_rows[0])
    T_list = [T]
    ptr = [0] * d
    while True:
        row_t = [0.0] * d
        row_v = [0.0] * d
        exhausted = False
        for k in range(d):
            i = ptr[k]
            tk = t_lists[k]
            n = lens[k]
            while i < n and tk[i] <= T:
                i += 1
            if i == n:
                exhausted = True
                break
            ptr[k] = i
            row_t[k] = tk[i]
            row_v[k] = v_lists[k][i]
        if exhausted:
            break
        T = max(row_t)
        T_list.append(T)
        tau_rows.append(row_t)
        val_rows.append(row_v)
    return SyncGrid(
        refresh_times=np.array(T_list),
        tau=np.array(tau_rows),
        values=np.array(val_rows),
        asset_ids=tuple(s.asset_id for s in series),
    )


def overlap_stats(grid: SyncGrid) -> np.ndarray:
    """Per-pair fraction of grid slots whose interpolated ticks coincide."""
    return grid.overlap.mean(axis=0)
