"""
Capacity search and parameter sweeps: the largest per-UE arrival rate meeting a
(latency target, outage probability) pair, the best-effort baseline and the
throughput cost grid.
"""
import asyncio
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .analyzer import OutageResult, mean_throughput, outage_latency, required_samples, throughput_cost
from .config import ScenarioConfig, offered_load, scenario_hash, tti_duration
from .core import SimulationResult, run_simulation
from .logger import SimLogger
from .phy import data_re_per_prb, load_mcs_table

WORKERS_ENV = 'URLLC_SIM_WORKERS'
HORIZON_SLACK = 1.5
DEFAULT_BOUND_RATIO = 100.0
SWEEP_COLUMNS = ['phi_ms', 'rho', 'payload_B', 'scheduler', 'omega_star_mbps', 'psi_pct', 'status']


class InfeasibleQuery(RuntimeError):
    """The latency/outage target fails already at the lower search bound."""

    def __init__(self, probe: 'ProbeResult'):
        self.probe = probe
        latency = 'n/a' if probe.outage.latency_s is None else f"{probe.outage.latency_s * 1e3:.3f} ms"
        super().__init__(f"target infeasible at lambda={probe.lam:g}/s (outage latency {latency})")


class InsufficientSamples(RuntimeError):
    """The packet budget cannot resolve the requested outage probability."""

    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"outage quantile needs at least {required} packets, budget is {available}")


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, '')
    try:
        workers = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    return max(workers, 1)


async def _gather_in_processes(fn: Callable, jobs: Sequence[tuple], workers: int) -> list:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        tasks = [loop.run_in_executor(pool, fn, *job) for job in jobs]
        return await asyncio.gather(*tasks)


def default_search_bounds(cfg: ScenarioConfig) -> Tuple[float, float]:
    """Per-UE rate bracket: the air-interface peak at the top MCS and one hundredth of it."""
    peak_bps = cfg.num_cells * cfg.prb_count * data_re_per_prb(cfg) * load_mcs_table().highest.se / tti_duration(cfg)
    high = peak_bps / (cfg.num_ues * cfg.payload_B * 8)
    return high / DEFAULT_BOUND_RATIO, high


def run_parallel(fn: Callable, jobs: Sequence[tuple], workers: Optional[int] = None) -> list:
    """Apply ``fn`` to every job; results come back in job order regardless of completion order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    return asyncio.run(_gather_in_processes(fn, jobs, min(workers, len(jobs))))


@dataclass(frozen=True)
class CapacityQuery:
    scenario: ScenarioConfig
    latency_target_s: float
    rho: float
    lambda_low: float
    lambda_high: float
    tolerance: float = 0.05
    min_packets: int = 100000
    replication: int = 0

    def __post_init__(self):
        if not (self.lambda_low > 0 and self.lambda_high > 0):
            raise ValueError("search bounds must be positive")
        if not self.lambda_low < self.lambda_high:
            raise ValueError("lower search bound must be below the upper bound")
        if not 0.0 < self.tolerance < 0.5:
            raise ValueError("tolerance must lie in (0, 0.5)")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if not self.latency_target_s > 0:
            raise ValueError("latency target must be positive")
        if self.min_packets < 1:
            raise ValueError("min_packets must be >= 1")

    def probe_config(self, lam: float) -> ScenarioConfig:
        """Scenario of one probe: rate ``lam`` and a horizon long enough for ``min_packets`` after warm-up."""
        base = self.scenario
        tti_s = tti_duration(base)
        warmup_s = base.warmup_tti * tti_s
        horizon = warmup_s + HORIZON_SLACK * self.min_packets / (lam * base.num_ues) + 100 * tti_s
        target_ms = self.latency_target_s * 1e3 if math.isfinite(self.latency_target_s) else base.latency_target_ms
        return replace(base, traffic_mode='urllc_ftp3', arrival_rate_lambda=lam, outage_prob=self.rho,
                       latency_target_ms=target_ms, target_packets=self.min_packets, horizon_s=horizon)

    def load_of(self, lam: float) -> float:
        return offered_load(replace(self.scenario, traffic_mode='urllc_ftp3', arrival_rate_lambda=lam))


@dataclass(frozen=True)
class ProbeResult:
    lam: float
    omega_bps: float
    outage: OutageResult
    passed: bool
    replication: int
    stopped_early: bool = False


def _encode_latency(value: Optional[float]):
    return 'inf' if value is not None and math.isinf(value) else value


@dataclass
class CapacityResult:
    query: CapacityQuery
    lambda_star: float
    omega_star_bps: float
    status: str = 'ok'
    probes: List[ProbeResult] = field(default_factory=list)
    bisection_probes: int = 0

    @property
    def omega_star_mbps(self) -> float:
        return self.omega_star_bps / 1e6

    @property
    def n_probes(self) -> int:
        return len(self.probes)

    @property
    def noisy(self) -> bool:
        return self.status == 'noisy'

    def to_json(self) -> Dict:
        q = self.query
        return {
            'lambda_star': self.lambda_star,
            'omega_star_bps': self.omega_star_bps,
            'omega_star_mbps': self.omega_star_mbps,
            'status': self.status,
            'phi_ms': q.latency_target_s * 1e3 if math.isfinite(q.latency_target_s) else None,
            'rho': q.rho,
            'bounds': [q.lambda_low, q.lambda_high],
            'tolerance': q.tolerance,
            'min_packets': q.min_packets,
            'scenario_hash': scenario_hash(q.scenario),
            'seed': q.scenario.seed,
            'probes': [{'lambda': p.lam, 'omega_bps': p.omega_bps, 'passed': p.passed,
                        'outage_latency_s': _encode_latency(p.outage.latency_s), 'n_samples': p.outage.n_samples,
                        'stopped_early': p.stopped_early, 'replication': p.replication} for p in self.probes],
        }


def evaluate_probe(query: CapacityQuery, lam: float, replication: Optional[int] = None,
                   logger: Optional[SimLogger] = None,
                   simulate: Callable[..., SimulationResult] = run_simulation) -> ProbeResult:
    """Run one simulation at rate ``lam`` and test outage_latency(rho) <= phi.

    A probe fails when it collects fewer than 100 / rho samples, or when it is cut short after
    more than rho * min_packets measured packets exceeded phi.
    """
    replication = query.replication if replication is None else replication
    logger = logger or SimLogger()
    limit = None
    if math.isfinite(query.latency_target_s):
        limit = (query.latency_target_s, int(math.floor(query.rho * query.min_packets)))
    result = simulate(query.probe_config(lam), logger=logger, replication=replication, exceedance_limit=limit)
    outage = outage_latency(result, query.rho)
    passed = outage.sufficient and outage.meets(query.latency_target_s) and not result.stopped_early
    if not outage.sufficient:
        logger.warning(f"Probe lambda={lam:g}/s collected {outage.n_samples} samples, "
                       f"{outage.required} needed for rho={query.rho:g}; counted as a fail")
    probe = ProbeResult(lam, query.load_of(lam), outage, passed, replication, result.stopped_early)
    logger.log_probe(lam, probe.omega_bps, probe.passed, outage.latency_s, outage.n_samples)
    return probe


def _violates(probe: ProbeResult, history: Sequence[ProbeResult]) -> bool:
    if probe.passed:
        return any(not p.passed and p.lam < probe.lam for p in history)
    return any(p.passed and p.lam > probe.lam for p in history)


class _Prober:
    """Sequential probes sharing one replication; a non-monotone verdict is re-run once on a fresh sub-seed.

    Inside a bisection bracket every probe lies between a pass and a fail, so only probe
    sequences that leave the bracket (grid scans) can trip the check.
    """

    def __init__(self, query: CapacityQuery, logger: SimLogger, simulate: Callable[..., SimulationResult]):
        self.query = query
        self.logger = logger
        self.simulate = simulate
        self.history: List[ProbeResult] = []
        self.noisy = False

    def __call__(self, lam: float) -> ProbeResult:
        probe = evaluate_probe(self.query, lam, logger=self.logger, simulate=self.simulate)
        if _violates(probe, self.history):
            self.logger.warning(f"Non-monotone verdict at lambda={lam:g}/s, re-running with a fresh seed")
            probe = evaluate_probe(self.query, lam, self.query.replication + 1, self.logger, self.simulate)
            if _violates(probe, self.history):
                self.noisy = True
                self.logger.warning(f"Verdict at lambda={lam:g}/s still non-monotone; result flagged noisy")
        self.history.append(probe)
        return probe


def _check_budget(query: CapacityQuery) -> None:
    needed = required_samples(query.rho)
    if query.min_packets < needed:
        raise InsufficientSamples(needed, query.min_packets)


def capacity_search(query: CapacityQuery, logger: Optional[SimLogger] = None,
                    simulate: Callable[..., SimulationResult] = run_simulation) -> CapacityResult:
    """Bisection on lambda for the supported load Omega*.

    Raises InsufficientSamples when ``min_packets`` < 100 / rho and InfeasibleQuery when the
    lower bound already fails.
    """
    _check_budget(query)
    logger = logger or SimLogger()
    probe = _Prober(query, logger, simulate)

    low = probe(query.lambda_low)
    if not low.passed:
        raise InfeasibleQuery(low)
    high = probe(query.lambda_high)
    if high.passed:
        return CapacityResult(query, high.lam, high.omega_bps, 'noisy' if probe.noisy else 'ok', probe.history)

    lo, hi = query.lambda_low, query.lambda_high
    steps = 0
    while (hi - lo) / lo >= query.tolerance:
        mid = 0.5 * (lo + hi)
        steps += 1
        if probe(mid).passed:
            lo = mid
        else:
            hi = mid
    logger.log(f"Capacity search converged after {steps} bisection probes: "
               f"lambda*={lo:g}/s, Omega*={query.load_of(lo) / 1e6:.4f} Mbps")
    return CapacityResult(query, lo, query.load_of(lo), 'noisy' if probe.noisy else 'ok', probe.history, steps)


def grid_search(query: CapacityQuery, n_points: int = 10, logger: Optional[SimLogger] = None,
                simulate: Callable[..., SimulationResult] = run_simulation) -> CapacityResult:
    """Evaluate an evenly spaced lambda grid over the search bounds; the largest passing point wins."""
    if n_points < 2:
        raise ValueError("grid search needs at least 2 points")
    _check_budget(query)
    logger = logger or SimLogger()
    probe = _Prober(query, logger, simulate)
    for lam in np.linspace(query.lambda_low, query.lambda_high, n_points):
        probe(float(lam))
    passing = [p for p in probe.history if p.passed]
    if not passing:
        raise InfeasibleQuery(probe.history[0])
    best = max(passing, key=lambda p: p.lam)
    return CapacityResult(query, best.lam, best.omega_bps, 'noisy' if probe.noisy else 'ok', probe.history)


def be_baseline(cfg: ScenarioConfig, scheduler: Optional[str] = None, replication: int = 0,
                logger: Optional[SimLogger] = None) -> float:
    """Mean decoded network throughput (bits/s) with full-buffer traffic."""
    be_cfg = replace(cfg, traffic_mode='best_effort', scheduler=scheduler or cfg.scheduler)
    result = run_simulation(be_cfg, logger=logger, replication=replication)
    mu = mean_throughput(result)
    (logger or SimLogger()).log(f"Best-effort baseline ({be_cfg.scheduler}): {mu / 1e6:.4f} Mbps")
    return mu


def run_replications(cfg: ScenarioConfig, replications: int, workers: Optional[int] = None) -> List[SimulationResult]:
    """Independent replications of one scenario executed in parallel."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    return run_parallel(_replication_job, [(cfg, r) for r in range(replications)], workers)


def _replication_job(cfg: ScenarioConfig, replication: int) -> SimulationResult:
    return run_simulation(cfg, replication=replication)


# Sweeps

@dataclass(frozen=True)
class SweepCell:
    phi_ms: float
    rho: float
    payload_B: int
    scheduler: str

    @property
    def key(self) -> Tuple:
        return (self.phi_ms, self.rho, self.payload_B, self.scheduler)


@dataclass
class SweepRow:
    cell: SweepCell
    omega_star_bps: Optional[float]
    psi_pct: Optional[float]
    status: str
    detail: str = ''


@dataclass
class SweepResult:
    rows: List[SweepRow]
    baselines: Dict[str, float]
    metadata: Dict[str, object]

    def to_frame(self) -> pd.DataFrame:
        records = [{
            'phi_ms': r.cell.phi_ms, 'rho': r.cell.rho, 'payload_B': r.cell.payload_B,
            'scheduler': r.cell.scheduler,
            'omega_star_mbps': r.omega_star_bps / 1e6 if r.omega_star_bps is not None else None,
            'psi_pct': r.psi_pct, 'status': r.status,
        } for r in sorted(self.rows, key=lambda r: r.cell.key)]
        return pd.DataFrame(records, columns=SWEEP_COLUMNS)


def sweep_cells(phi_ms: Sequence[float], rhos: Sequence[float], payloads: Sequence[int],
                schedulers: Sequence[str]) -> List[SweepCell]:
    return [SweepCell(float(p), float(r), int(b), s)
            for p, r, b, s in itertools.product(phi_ms, rhos, payloads, schedulers)]


def _sweep_job(base: ScenarioConfig, cell: SweepCell, bounds: Optional[Tuple[float, float]], tolerance: float,
               min_packets: int) -> Tuple[SweepCell, Optional[float], str, str]:
    cfg = replace(base, payload_B=cell.payload_B, scheduler=cell.scheduler, traffic_mode='urllc_ftp3')
    bounds = bounds or default_search_bounds(cfg)
    try:
        query = CapacityQuery(cfg, cell.phi_ms * 1e-3, cell.rho, bounds[0], bounds[1], tolerance, min_packets)
        result = capacity_search(query)
    except InsufficientSamples as e:
        return cell, None, 'insufficient', str(e)
    except InfeasibleQuery as e:
        return cell, None, 'infeasible', str(e)
    return cell, result.omega_star_bps, result.status, ''


def _baseline_job(base: ScenarioConfig, scheduler: str) -> Tuple[str, float]:
    return scheduler, be_baseline(base, scheduler)


def run_sweep(base: ScenarioConfig, cells: Sequence[SweepCell], bounds: Optional[Tuple[float, float]] = None,
              tolerance: float = 0.05, min_packets: int = 100000, logger: Optional[SimLogger] = None,
              workers: Optional[int] = None) -> SweepResult:
    """Capacity search for every grid cell plus throughput cost against each scheduler's BE baseline.

    Without ``bounds`` every cell searches the default bracket of its own payload.
    """
    logger = logger or SimLogger()
    start = time.time()
    schedulers = sorted({c.scheduler for c in cells})
    logger.log(f"Sweep of {len(cells)} cells over schedulers {', '.join(schedulers)} "
               f"with {workers or worker_count()} workers")

    baselines = dict(run_parallel(_baseline_job, [(base, s) for s in schedulers], workers))
    outcomes = run_parallel(_sweep_job, [(base, c, bounds, tolerance, min_packets) for c in cells], workers)

    rows = []
    for cell, omega, status, detail in outcomes:
        psi = None
        if omega is not None:
            psi = throughput_cost(omega, baselines[cell.scheduler], logger)
        elif status == 'infeasible':
            # nothing is supported at the lower bound
            omega, psi = 0.0, throughput_cost(0.0, baselines[cell.scheduler], logger)
        if status != 'ok':
            logger.warning(f"Sweep cell phi={cell.phi_ms:g} ms rho={cell.rho:g} B={cell.payload_B} "
                           f"{cell.scheduler}: {status} {detail}".rstrip())
        rows.append(SweepRow(cell, omega, psi, status, detail))

    metadata = {'seed': base.seed, 'scenario_hash': scenario_hash(base), 'runtime_s': time.time() - start,
                'bounds': list(bounds) if bounds else 'auto', 'tolerance': tolerance, 'min_packets': min_packets}
    return SweepResult(rows, baselines, metadata)
