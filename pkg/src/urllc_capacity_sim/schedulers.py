"""
Downlink user-selection criteria and the scheduler's per-UE state.
"""
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Sequence

import numpy as np

from .config import ScenarioConfig


class BaseScheduler(ABC):
    name = ''

    @abstractmethod
    def metric(self, rate_bps: float, avg_throughput_bps: float) -> float:
        pass

    def score(self, ue: int, rate_bps: float, state: 'SchedulerState') -> float:
        return self.metric(rate_bps, float(state.avg_throughput[ue]))

    def rank(self, ues: Sequence[int], rate_of: Callable[[int], float], state: 'SchedulerState') -> List[int]:
        """UEs by descending score; ties go to the lower UE index."""
        return sorted(ues, key=lambda ue: (-self.score(ue, rate_of(ue), state), ue))


class PFScheduler(BaseScheduler):
    """Proportional fair: instantaneous rate over average throughput."""
    name = 'pf'

    def metric(self, rate_bps: float, avg_throughput_bps: float) -> float:
        return rate_bps / avg_throughput_bps


class ETScheduler(BaseScheduler):
    """Equal throughput: the UE with the lowest average throughput always wins."""
    name = 'et'

    def metric(self, rate_bps: float, avg_throughput_bps: float) -> float:
        return 1.0 / avg_throughput_bps


SCHEDULER_TYPES = {'pf': PFScheduler, 'et': ETScheduler}


def make_scheduler(name: str) -> BaseScheduler:
    if name not in SCHEDULER_TYPES:
        raise ValueError(f"Unsupported scheduler: {name}")
    return SCHEDULER_TYPES[name]()


@dataclass
class SchedulerState:
    """EWMA average throughput per UE plus the pending queues the scheduler drains."""
    avg_throughput: np.ndarray
    time_constant_tti: float
    floor_bps: float
    new_data: List[Deque] = field(default_factory=list)
    retransmissions: List[list] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: ScenarioConfig) -> 'SchedulerState':
        return cls(
            avg_throughput=np.full(cfg.num_ues, cfg.pf_initial_throughput_bps, dtype=float),
            time_constant_tti=cfg.pf_time_constant_tti,
            floor_bps=cfg.pf_initial_throughput_bps,
            new_data=[deque() for _ in range(cfg.num_ues)],
            retransmissions=[[] for _ in range(cfg.num_cells)],
        )

    def update(self, served_bits: np.ndarray, tti_s: float) -> None:
        """One EWMA step over all UEs with the bits each delivered this TTI."""
        beta = 1.0 / self.time_constant_tti
        self.avg_throughput *= (1.0 - beta)
        self.avg_throughput += beta * served_bits / tti_s
        np.maximum(self.avg_throughput, self.floor_bps, out=self.avg_throughput)

