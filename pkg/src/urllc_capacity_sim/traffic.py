"""
Downlink traffic sources: FTP3 (fixed payload, Poisson arrivals per UE) and full buffer.
"""
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .config import ScenarioConfig, rng_stream


@dataclass(frozen=True)
class Arrival:
    ue: int
    time: float
    size_bytes: int


@dataclass
class TrafficTrace:
    """Arrivals of all UEs merged in time order."""
    times: np.ndarray
    ues: np.ndarray
    sizes: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def __iter__(self) -> Iterator[Arrival]:
        for t, ue, size in zip(self.times, self.ues, self.sizes):
            yield Arrival(int(ue), float(t), int(size))


def poisson_arrivals(rate: float, horizon_s: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times in [0, horizon) of a Poisson process.

    Unit-mean exponential gaps are scaled by 1/rate, so one stream gives nested
    arrival sets across rates (common random numbers for load sweeps).
    """
    if rate <= 0 or horizon_s <= 0:
        return np.empty(0)
    mass = rate * horizon_s
    chunk = int(mass + 6 * math.sqrt(mass) + 16)
    total = np.cumsum(rng.exponential(1.0, chunk))
    while total[-1] < mass:
        more = np.cumsum(rng.exponential(1.0, chunk)) + total[-1]
        total = np.concatenate([total, more])
    return total[total < mass] / rate


def generate_traffic(cfg: ScenarioConfig, horizon_s: Optional[float] = None, replication: int = 0) -> TrafficTrace:
    """Independent Poisson processes of rate lambda per UE with a fixed payload of B bytes."""
    if cfg.traffic_mode != 'urllc_ftp3':
        raise ValueError("best_effort traffic is full buffer; use FullBufferSource")
    horizon = cfg.horizon_s if horizon_s is None else horizon_s
    per_ue = [poisson_arrivals(cfg.arrival_rate_lambda, horizon, rng_stream(cfg, 'traffic', ue, replication))
              for ue in range(cfg.num_ues)]
    times = np.concatenate(per_ue) if per_ue else np.empty(0)
    ues = np.concatenate([np.full(t.size, ue, dtype=int) for ue, t in enumerate(per_ue)]) if per_ue \
        else np.empty(0, dtype=int)
    order = np.argsort(times, kind='stable')
    return TrafficTrace(times[order], ues[order], np.full(times.size, cfg.payload_B, dtype=int))


class FullBufferSource:
    """Best-effort traffic: every UE always has unbounded pending bits."""

    def __init__(self, num_ues: int):
        self.num_ues = num_ues

    def pending_bits(self, ue: int) -> float:
        return math.inf

    def has_data(self, ue: int) -> bool:
        return True
