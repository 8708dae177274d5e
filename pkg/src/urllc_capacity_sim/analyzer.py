"""
KPIs from packet ledgers: outage latency, ECDFs, mean throughput, throughput cost
and the latency decomposition.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .config import scenario_hash
from .core import PacketRecord, SimulationResult
from .logger import SimLogger

ECDF_POINTS = 1000
ECDF_TAIL_POINTS = 100
DELAY_COMPONENTS = ('prep', 'queue', 'tx', 'decode', 'harq')


def required_samples(rho: float) -> int:
    """Samples needed before a (1 - rho) quantile is trusted: 100 / rho."""
    return math.ceil(100.0 / rho - 1e-9)


def _nearest_rank(n: int, q: float) -> int:
    return min(max(math.ceil(q * n - 1e-9), 1), n)


class EcdfAccumulator:
    """Exact empirical distribution with nearest-rank quantiles; accepts +inf samples."""

    def __init__(self, values: Optional[Iterable[float]] = None):
        self._chunks: List[np.ndarray] = []
        self._sorted: Optional[np.ndarray] = np.empty(0)
        if values is not None:
            self.add(values)

    def add(self, values: Iterable[float]) -> None:
        chunk = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float).ravel()
        if chunk.size == 0:
            return
        if np.isnan(chunk).any():
            raise ValueError("ECDF samples must not be NaN")
        self._chunks.append(chunk)
        self._sorted = None

    def merge(self, other: 'EcdfAccumulator') -> 'EcdfAccumulator':
        merged = EcdfAccumulator()
        merged.add(self.values)
        merged.add(other.values)
        return merged

    @property
    def values(self) -> np.ndarray:
        if self._sorted is None:
            pieces = self._chunks
            self._sorted = np.sort(np.concatenate(pieces)) if pieces else np.empty(0)
            self._chunks = [self._sorted] if self._sorted.size else []
        return self._sorted

    @property
    def count(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.count

    def quantile(self, q):
        """Inverse ECDF: the smallest sample x with F(x) >= q."""
        values = self.values
        if values.size == 0:
            raise ValueError("quantile of an empty ECDF")
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr < 0) | (q_arr > 1)):
            raise ValueError("quantile probability must lie in [0, 1]")
        ranks = np.clip(np.ceil(q_arr * values.size - 1e-9).astype(int), 1, values.size)
        result = values[ranks - 1]
        return float(result) if np.ndim(result) == 0 else result

    def cdf(self, x: float) -> float:
        values = self.values
        return float(np.searchsorted(values, x, side='right')) / values.size if values.size else math.nan

    def to_frame(self, points: int = ECDF_POINTS, tail_points: int = ECDF_TAIL_POINTS) -> pd.DataFrame:
        """``value,cum_prob`` rows on an even probability grid plus the exact largest samples."""
        n = self.count
        if n == 0:
            return pd.DataFrame({'value': [], 'cum_prob': []})
        probs = np.arange(1, points + 1) / points
        grid = pd.DataFrame({'value': self.quantile(probs), 'cum_prob': probs})
        k = min(tail_points, n)
        ranks = np.arange(n - k + 1, n + 1)
        tail = pd.DataFrame({'value': self.values[ranks - 1], 'cum_prob': ranks / n})
        frame = pd.concat([grid, tail], ignore_index=True)
        return frame.drop_duplicates().sort_values(['cum_prob', 'value'], kind='mergesort').reset_index(drop=True)


@dataclass(frozen=True)
class OutageResult:
    rho: float
    latency_s: Optional[float]
    n_samples: int
    required: int

    @property
    def sufficient(self) -> bool:
        return self.n_samples >= self.required

    def meets(self, target_s: float) -> bool:
        return self.latency_s is not None and self.latency_s <= target_s


Ledger = Union[SimulationResult, pd.DataFrame, Sequence[PacketRecord], EcdfAccumulator]


def latency_samples(ledger: Ledger) -> np.ndarray:
    """Per-packet latency after warm-up with drops as +inf.

    A simulation result right-censors packets still in flight at the end of the run at
    their age; a dumped ledger or a list of records carries no end time and skips them.
    """
    if isinstance(ledger, EcdfAccumulator):
        return ledger.values
    if isinstance(ledger, SimulationResult):
        return ledger.latencies(censored=True)[ledger.measured_mask]
    if isinstance(ledger, pd.DataFrame):
        latency = ledger['latency_s'].to_numpy(dtype=float)
        return latency[~np.isnan(latency)]
    return np.array([r.latency for r in ledger if not r.in_flight], dtype=float)


def latency_ecdf(ledger: Ledger) -> EcdfAccumulator:
    return ledger if isinstance(ledger, EcdfAccumulator) else EcdfAccumulator(latency_samples(ledger))


def outage_latency(ledger: Ledger, rho: float) -> OutageResult:
    """Empirical (1 - rho) nearest-rank latency quantile, flagged unless n >= 100 / rho."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    ecdf = latency_ecdf(ledger)
    n = ecdf.count
    value = ecdf.quantile(1.0 - rho) if n else None
    return OutageResult(rho, value, n, required_samples(rho))


def prb_ecdf(ledger: Ledger) -> EcdfAccumulator:
    """ECDF of total PRBs consumed per decoded packet, segments and retransmissions included."""
    if isinstance(ledger, SimulationResult):
        samples = ledger.packets['total_prbs_used'][ledger.measured_mask & ledger.decoded_mask]
    elif isinstance(ledger, pd.DataFrame):
        decoded = ledger[~ledger['t_decoded'].isna()]
        samples = decoded['prbs_total'].to_numpy(dtype=float)
    else:
        samples = [r.total_prbs_used for r in ledger if r.decoded]
    return EcdfAccumulator(samples)


def decoded_bits_after_warmup(result: SimulationResult) -> float:
    return float(result.decoded_bits[result.cfg.warmup_tti:].sum())


def mean_throughput(results: Union[SimulationResult, Sequence[SimulationResult]]) -> float:
    """Network throughput in bits/s: decoded bits over the pooled measurement window."""
    pool = [results] if isinstance(results, SimulationResult) else list(results)
    window = sum(r.window_s for r in pool)
    if window <= 0:
        return 0.0
    return sum(decoded_bits_after_warmup(r) for r in pool) / window


def throughput_cost(mu_urllc: float, mu_be: float, logger: Optional[SimLogger] = None) -> float:
    """Throughput cost in percent: (1 - mu_urllc / mu_be) x 100.

    Negative values (URLLC above the best-effort baseline) are returned unchanged and logged as anomalous.
    """
    if not mu_be > 0:
        raise ValueError("best-effort throughput must be positive")
    psi = (1.0 - mu_urllc / mu_be) * 100.0
    if psi < 0 and logger is not None:
        logger.warning(f"Anomalous throughput cost {psi:.2f}%: URLLC {mu_urllc:g} bps exceeds BE {mu_be:g} bps")
    return psi


def _component_columns(result: SimulationResult) -> Dict[str, np.ndarray]:
    keep = result.measured_mask & result.decoded_mask
    n = int(keep.sum())
    return {
        'prep': np.full(n, result.prep_s),
        'queue': result.packets['queue_delay'][keep],
        'tx': np.full(n, result.tti_s),
        'decode': np.full(n, result.decode_s),
        'harq': result.packets['harq_delay'][keep],
        'latency': result.latencies(censored=False)[keep],
    }


def latency_breakdown(ledger: Union[SimulationResult, Sequence[SimulationResult], pd.DataFrame]) -> Dict[str, Dict]:
    """Mean and nearest-rank 99th percentile of each latency component over decoded packets."""
    names = DELAY_COMPONENTS + ('latency',)
    if isinstance(ledger, pd.DataFrame):
        if ledger.empty:
            return {}
        decoded = ledger[~ledger['t_decoded'].isna()]
        columns = {name: decoded['latency_s' if name == 'latency' else f'{name}_s'].to_numpy(dtype=float)
                   for name in names}
    else:
        results = [ledger] if isinstance(ledger, SimulationResult) else list(ledger)
        if sum(r.n_packets for r in results) == 0:
            return {}
        pool = [_component_columns(r) for r in results]
        columns = {name: np.concatenate([c[name] for c in pool]) for name in names}
    breakdown = {}
    for name in names:
        values = columns[name]
        if values.size == 0:
            breakdown[name] = {'mean_s': None, 'p99_s': None}
            continue
        breakdown[name] = {'mean_s': float(values.mean()), 'p99_s': EcdfAccumulator(values).quantile(0.99)}
    return breakdown


@dataclass
class KpiSummary:
    mu_bps: float
    outage: Dict[float, OutageResult]
    drop_rate: float
    realized_bler: float
    n_packets: int
    n_decoded: int
    n_dropped: int
    n_in_flight: int
    breakdown: Dict[str, Dict] = field(default_factory=dict)
    scenario_hash: str = ''
    seed: int = 0
    replications: int = 1

    def to_json(self) -> Dict:
        def encode(o: OutageResult):
            if o.latency_s is None or not o.sufficient:
                return None
            return 'inf' if math.isinf(o.latency_s) else o.latency_s

        return {
            'mu_bps': self.mu_bps,
            'outage_latency_s': {repr(rho): encode(o) for rho, o in self.outage.items()},
            'outage_samples': {repr(rho): {'n': o.n_samples, 'required': o.required}
                               for rho, o in self.outage.items()},
            'drop_rate': self.drop_rate,
            'realized_bler': None if math.isnan(self.realized_bler) else self.realized_bler,
            'n_packets': self.n_packets,
            'n_decoded': self.n_decoded,
            'n_dropped': self.n_dropped,
            'n_in_flight': self.n_in_flight,
            'breakdown': self.breakdown,
            'scenario_hash': self.scenario_hash,
            'seed': self.seed,
            'replications': self.replications,
        }

    def report_fields(self) -> Dict[str, object]:
        outage = {}
        for rho, o in self.outage.items():
            value = 'n/a' if o.latency_s is None else f"{o.latency_s * 1e3:.4f} ms"
            flag = '' if o.sufficient else f" (insufficient: {o.n_samples} < {o.required})"
            outage[f"rho={rho:g}"] = value + flag
        return {
            'Scenario': self.scenario_hash,
            'Seed': self.seed,
            'Throughput': f"{self.mu_bps / 1e6:.4f} Mbps",
            'Packets': f"{self.n_packets} ({self.n_decoded} decoded, {self.n_dropped} dropped, "
                       f"{self.n_in_flight} in flight)",
            'Drop rate': f"{self.drop_rate:.3e}",
            'First-tx BLER': f"{self.realized_bler:.4%}" if not math.isnan(self.realized_bler) else 'n/a',
            'Outage latency': outage,
        }


def summarize(results: Union[SimulationResult, Sequence[SimulationResult]],
              rhos: Optional[Sequence[float]] = None) -> KpiSummary:
    """KPIs of one run, or of replications pooled (ECDF merge, throughput over the pooled window)."""
    pool = [results] if isinstance(results, SimulationResult) else list(results)
    if not pool:
        raise ValueError("nothing to summarize")
    cfg = pool[0].cfg
    rhos = list(rhos) if rhos else [cfg.outage_prob]
    latencies = EcdfAccumulator()
    n_packets = n_decoded = n_dropped = n_in_flight = 0
    for result in pool:
        latencies = latencies.merge(latency_ecdf(result))
        measured = result.measured_mask
        n_packets += int(measured.sum())
        n_decoded += int((measured & result.decoded_mask).sum())
        n_dropped += int((measured & result.dropped_mask).sum())
        n_in_flight += int((measured & result.in_flight_mask).sum())
    attempts = sum(r.first_tx_attempts for r in pool)
    failures = sum(r.first_tx_failures for r in pool)
    completed = n_decoded + n_dropped
    return KpiSummary(
        mu_bps=mean_throughput(pool),
        outage={rho: outage_latency(latencies, rho) for rho in rhos},
        drop_rate=n_dropped / completed if completed else 0.0,
        realized_bler=failures / attempts if attempts else math.nan,
        n_packets=n_packets,
        n_decoded=n_decoded,
        n_dropped=n_dropped,
        n_in_flight=n_in_flight,
        breakdown=latency_breakdown(pool) if cfg.traffic_mode == 'urllc_ftp3' else {},
        scenario_hash=scenario_hash(cfg),
        seed=cfg.seed,
        replications=len(pool),
    )
