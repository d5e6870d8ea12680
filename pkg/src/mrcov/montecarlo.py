"""Replication engine: coverage of the standardized statistic across scenarios.

Each replication simulates a market, synchronizes the ticks, estimates
the covariance matrix, evaluates the theoretical asymptotic variance on
the replication's own ground truth, and standardizes the target entry.
Scenario results aggregate mean, standard deviation and two-sided 95%/99%
coverage against standard-normal bands.

Reproducibility: replication r draws from a counter-based generator
keyed by (master_seed, r), so results are bit-identical for a given seed
regardless of how replications are distributed over workers.

The window is sized from the realized synchronized grid (k_n =
ceil(theta sqrt(N))); the asymptotic variance is therefore evaluated at
the effective scale k_n / sqrt(n) implied by that window at the latent
frequency n, which is what the distribution theory pins down.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .avar import asymptotic_covariance, standardize
from .errors import InvalidParameterError, MrcovError
from .estimator import EstimatorConfig, mrc
from .simulate import CgmyParams, HestonParams, SamplingSchemeSpec, calibrate_jump_pair, simulate_paths
from .ticks import TickSeries, refresh_times

Z95 = 1.959964  # two-sided standard-normal quantiles used for coverage
Z99 = 2.575829

CSV_COLUMNS = (
    "scenario_id", "theta", "scheme", "p", "n", "reps",
    "mean", "sd", "cov95", "cov99", "failures",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo scenario; `n` lives on the sampling scheme."""

    heston: HestonParams
    cgmy: CgmyParams
    scheme: SamplingSchemeSpec
    theta: float = 1.0
    noise_sd: float = 0.005
    replications: int = 1000
    master_seed: int = 0
    target_entry: tuple = (0, 1)
    scenario_id: str = ""

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidParameterError("need at least one replication")
        if self.theta <= 0:
            raise InvalidParameterError("theta must be positive")

    @property
    def n(self) -> int:
        return self.scheme.n


@dataclass(frozen=True)
class ScenarioResult:
    """Aggregates over non-degenerate replications."""

    mean: float
    sd: float
    coverage95: float
    coverage99: float
    replications_used: int
    failures: int
    z_values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.coverage99 < self.coverage95:
            raise InvalidParameterError("99% coverage cannot be below 95% coverage")


def default_scenario(
    theta: float = 1.0,
    p: Optional[float] = 1.0 / 3.0,
    kind: str = "equidistant",
    n: int = 23400,
    replications: int = 1000,
    master_seed: int = 0,
    noise_sd: float = 0.005,
    jump_share: float = 0.15,
    scenario_id: str = "",
) -> ScenarioConfig:
    """Paper-default scenario: stochastic-volatility market with calibrated jumps."""
    heston = HestonParams()
    cgmy = calibrate_jump_pair(jump_share, heston.sigma_bar, 0.2)
    thinning = None if p is None else (p, p)
    scheme = SamplingSchemeSpec(kind=kind, n=n, thinning=thinning)
    if not scenario_id:
        ptxt = "none" if p is None else f"{p:g}"
        scenario_id = f"{kind}-theta{theta:g}-p{ptxt}"
    return ScenarioConfig(
        heston=heston, cgmy=cgmy, scheme=scheme, theta=theta, noise_sd=noise_sd,
        replications=replications, master_seed=master_seed, scenario_id=scenario_id,
    )


def replication_rng(master_seed: int, r: int) -> np.random.Generator:
    """Counter-based stream for replication r, derived from (master_seed, r)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(r,))))


def run_replication(cfg: ScenarioConfig, r: int) -> float:
    """One standardized statistic; raises MrcovError subclasses on degeneracy."""
    rng = replication_rng(cfg.master_seed, r)
    sim = simulate_paths(cfg.heston, cfg.cgmy, cfg.scheme, cfg.noise_sd, rng)
    series = [
        TickSeries(f"a{k + 1}", sim.tick_times[k], sim.tick_values[k]) for k in range(2)
    ]
    grid = refresh_times(series)
    est = mrc(grid, EstimatorConfig(theta=cfg.theta, finite_sample_psis=True))
    theta_eff = est.k_n / math.sqrt(cfg.n)
    av = asymptotic_covariance(sim.truth, theta_eff, est.psis_used)
    return standardize(est, sim.truth, av, cfg.n, *cfg.target_entry)


def _run_range(cfg: ScenarioConfig, start: int, stop: int) -> list:
    out = []
    for r in range(start, stop):
        try:
            out.append(run_replication(cfg, r))
        except MrcovError:
            out.append(math.nan)
    return out


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """All replications of one scenario, optionally across a process pool.

    Aggregation is a fixed-order reduction over replication indices, so
    the result does not depend on the worker count.
    """
    reps = cfg.replications
    if threads <= 1 or reps < 4:
        zs = _run_range(cfg, 0, reps)
    else:
        n_chunks = min(threads * 4, reps)
        bounds = np.linspace(0, reps, n_chunks + 1).astype(int)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(_run_range, [cfg] * n_chunks, bounds[:-1], bounds[1:])
            zs = [z for part in parts for z in part]
    zs = np.asarray(zs)
    good = zs[np.isfinite(zs)]
    failures = int(len(zs) - len(good))
    if len(good) == 0:
        raise MrcovError(f"all {reps} replications of scenario {cfg.scenario_id!r} failed")
    return ScenarioResult(
        mean=float(good.mean()),
        sd=float(good.std(ddof=1)) if len(good) > 1 else 0.0,
        coverage95=float(np.mean(np.abs(good) <= Z95)),
        coverage99=float(np.mean(np.abs(good) <= Z99)),
        replications_used=int(len(good)),
        failures=failures,
        z_values=zs,
    )


def run_table(cfgs: Sequence[ScenarioConfig], threads: int = 1) -> list[dict]:
    """Run a list of scenarios; per-row errors are recorded, not raised."""
    if not cfgs:
        raise InvalidParameterError("need at least one scenario configuration")
    rows = []
    for cfg in cfgs:
        try:
            result = run_scenario(cfg, threads=threads)
            rows.append({"config": cfg, "result": result, "error": None})
        except MrcovError as exc:
            rows.append({"config": cfg, "result": None, "error": str(exc)})
    return rows


def table2_configs(
    kind: str = "equidistant",
    thetas: Sequence[float] = (1.0 / 3.0, 1.0),
    ps: Sequence[float] = (1.0 / 3.0, 1.0 / 5.0, 1.0 / 10.0, 1.0 / 30.0),
    n: int = 23400,
    replications: int = 1000,
    master_seed: int = 0,
) -> list[ScenarioConfig]:
    """The coverage-table grid: window scales crossed with observation probabilities."""
    return [
        default_scenario(
            theta=theta, p=p, kind=kind, n=n,
            replications=replications, master_seed=master_seed,
        )
        for theta in thetas
        for p in ps
    ]


def _row_cells(row: dict) -> dict:
    cfg = row["config"]
    res = row["result"]
    p = cfg.scheme.thinning[0] if cfg.scheme.thinning else 1.0
    cells = {
        "scenario_id": cfg.scenario_id,
        "theta": f"{cfg.theta:.10g}",
        "scheme": cfg.scheme.kind,
        "p": f"{p:.10g}",
        "n": str(cfg.n),
        "reps": str(cfg.replications),
    }
    if res is None:
        cells.update({k: "" for k in ("mean", "sd", "cov95", "cov99", "failures")})
    else:
        cells.update(
            mean=f"{res.mean:.6f}",
            sd=f"{res.sd:.6f}",
            cov95=f"{res.coverage95:.6f}",
            cov99=f"{res.coverage99:.6f}",
            failures=str(res.failures),
        )
    return cells


def write_table_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(_row_cells(row))


def write_table_json(rows: Sequence[dict], path) -> None:
    payload = []
    for row in rows:
        res = row["result"]
        payload.append(
            {
                "config": dataclasses.asdict(row["config"]),
                "result": None if res is None else {
                    "mean": res.mean,
                    "sd": res.sd,
                    "cov95": res.coverage95,
                    "cov99": res.coverage99,
                    "replications_used": res.replications_used,
                    "failures": res.failures,
                },
                "error": row["error"],
            }
        )
    with open(path, "w") as fh:
        json.dump({"rows": payload}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_z_values(rows: Sequence[dict], path) -> None:
    """Raw standardized statistics per scenario, for external histogramming."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "replication", "z"])
        for row in rows:
            res = row["result"]
            if res is None or res.z_values is None:
                continue
            for r, z in enumerate(res.z_values):
                writer.writerow([row["config"].scenario_id, r, "" if math.isnan(z) else f"{z:.12g}"])
