"""
Link-to-system abstraction: MCS table, effective-SINR mapping, finite-blocklength
BLER, MCS selection against the BLER target, CQI reports and decode decisions.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp, ndtr, ndtri

from .config import ScenarioConfig

DATA_DIR = Path(__file__).parent / 'data'
CRC_BITS = 24
BLER_FLOOR = 1e-12
LOG2E_SQ = math.log2(math.e) ** 2


class AllocationInfeasible(ValueError):
    """The transport block needs more PRBs than the budget; the caller should segment."""

    def __init__(self, needed_prbs: int, budget: int):
        self.needed_prbs = needed_prbs
        self.budget = budget
        super().__init__(f"needs {needed_prbs} PRBs, {budget} available")


@dataclass(frozen=True)
class McsEntry:
    index: int
    mod_order: int
    code_rate: float
    se: float

    @property
    def bits_per_symbol(self) -> float:
        return math.log2(self.mod_order)


class McsTable:
    """Ordered MCS entries with strictly increasing spectral efficiency."""

    def __init__(self, entries: Sequence[McsEntry]):
        if not entries:
            raise ValueError("MCS table is empty")
        se = np.array([e.se for e in entries])
        if np.any(se <= 0) or np.any(np.diff(se) <= 0):
            raise ValueError("MCS spectral efficiency must be positive and strictly increasing")
        self.entries: List[McsEntry] = list(entries)
        self.se = se
        self.caps = np.array([e.bits_per_symbol for e in entries])

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> McsEntry:
        return self.entries[index]

    def __iter__(self) -> Iterator[McsEntry]:
        return iter(self.entries)

    @property
    def lowest(self) -> McsEntry:
        return self.entries[0]

    @property
    def highest(self) -> McsEntry:
        return self.entries[-1]

    def cqi_index(self, sinr: float) -> int:
        """Highest entry whose spectral efficiency does not exceed the Shannon capacity at ``sinr``."""
        capacity = math.log2(1.0 + max(sinr, 0.0))
        return max(int(np.searchsorted(self.se, capacity, side='right')) - 1, 0)


@lru_cache(maxsize=None)
def load_mcs_table(path: Optional[str] = None) -> McsTable:
    frame = pd.read_csv(path or DATA_DIR / 'mcs_table.csv', comment='#').sort_values('index')
    return McsTable([
        McsEntry(int(r['index']), int(r['mod_order']), float(r['code_rate']), float(r['se']))
        for r in frame.to_dict('records')
    ])


def data_re_per_prb(cfg: ScenarioConfig) -> int:
    """Data resource elements per PRB per TTI after control/DMRS overhead (36 by default)."""
    return 12 * (cfg.tti_symbols - cfg.overhead_symbols)


def bits_per_prb(entry: McsEntry, cfg: ScenarioConfig) -> float:
    return data_re_per_prb(cfg) * entry.se


# Effective SINR mapping

class SinrMapper(ABC):
    @abstractmethod
    def effective_rows(self, sinrs: np.ndarray, mcs: Optional[McsEntry] = None) -> np.ndarray:
        """Effective SINR of each row of a (rows, prbs) matrix."""

    def effective(self, sinrs: Sequence[float], mcs: Optional[McsEntry] = None) -> float:
        values = np.asarray(sinrs, dtype=float)
        if values.size == 0:
            raise ValueError("effective SINR of an empty allocation")
        return float(self.effective_rows(values.reshape(1, -1), mcs)[0])


class MiesmMapper(SinrMapper):
    """Mutual-information equivalent mapping with C(x) = log2(1 + x)."""

    def effective_rows(self, sinrs, mcs=None):
        return np.exp2(np.log2(1.0 + sinrs).mean(axis=1)) - 1.0


class EesmMapper(SinrMapper):
    """Exponential effective-SINR mapping with a per-modulation beta."""

    BETA = {4: 1.5, 16: 4.5, 64: 14.0, 256: 40.0}

    def effective_rows(self, sinrs, mcs=None):
        beta = self.BETA[mcs.mod_order] if mcs is not None else self.BETA[4]
        n = sinrs.shape[1]
        return -beta * (logsumexp(-sinrs / beta, axis=1) - math.log(n))


MAPPERS = {'miesm': MiesmMapper, 'eesm': EesmMapper}


def make_mapper(name: str) -> SinrMapper:
    if name not in MAPPERS:
        raise ValueError(f"Unsupported SINR mapping: {name}")
    return MAPPERS[name]()


def effective_sinr(per_prb_sinrs: Sequence[float], mapping: str = 'miesm') -> float:
    return make_mapper(mapping).effective(per_prb_sinrs)


# Block error probability

def _bler_vector(sinr: float, tb_bits: np.ndarray, n_re: np.ndarray, caps: np.ndarray) -> np.ndarray:
    tb_bits = np.asarray(tb_bits, dtype=float)
    n = np.asarray(n_re, dtype=float)
    shape = np.broadcast(tb_bits, n, caps).shape
    if sinr <= 0.0:
        return np.ones(shape)
    # capacity and dispersion both saturate where the modulation cap binds
    s = np.minimum(sinr, np.exp2(caps) - 1.0)
    capacity = np.log2(1.0 + s)
    dispersion = (1.0 - (1.0 + s) ** -2) * LOG2E_SQ
    arg = (n * capacity - tb_bits + 0.5 * np.log2(n)) / np.sqrt(n * dispersion)
    eps = np.clip(ndtr(-arg), BLER_FLOOR, 1.0)
    return np.where(tb_bits > n * caps, 1.0, eps)


def bler(effective_sinr: float, tb_bits: int, n_re: int, mcs: McsEntry) -> float:
    """Finite-blocklength normal approximation of the block error probability.

    Capacity is capped at the modulation's bits per symbol; one channel use per data RE.
    """
    if tb_bits <= 0 or n_re <= 0:
        raise ValueError("tb_bits and n_re must be positive")
    return float(_bler_vector(effective_sinr, np.array([tb_bits]), np.array([n_re]),
                              np.array([mcs.bits_per_symbol]))[0])


@dataclass(frozen=True)
class McsSelection:
    mcs: McsEntry
    n_prb: int
    tb_bits: int
    predicted_bler: float


def select_mcs(sinr_eff: float, bler_target: float, prb_budget: int, payload_bits: int,
               table: McsTable, cfg: ScenarioConfig) -> McsSelection:
    """Highest MCS meeting the BLER target for a transport block of ``payload_bits`` plus CRC.

    Falls back to the lowest entry when none meets the target. Raises AllocationInfeasible
    when the chosen allocation exceeds ``prb_budget``.
    """
    if payload_bits <= 0:
        raise ValueError("payload_bits must be positive")
    tb_bits = payload_bits + CRC_BITS
    re = data_re_per_prb(cfg)
    n_prb = np.ceil(tb_bits / (re * table.se) - 1e-9).astype(int)
    predicted = _bler_vector(sinr_eff, np.full(len(table), tb_bits), n_prb * re, table.caps)
    passing = np.flatnonzero(predicted <= bler_target)
    idx = int(passing[-1]) if passing.size else 0
    assert idx == 0 or predicted[idx] <= bler_target
    if n_prb[idx] > prb_budget:
        raise AllocationInfeasible(int(n_prb[idx]), prb_budget)
    return McsSelection(table[idx], int(n_prb[idx]), tb_bits, float(predicted[idx]))


def max_tb_bits(sinr_eff: float, bler_target: float, n_re: int, caps: np.ndarray) -> np.ndarray:
    """Largest transport block (bits) per modulation cap whose BLER over ``n_re`` stays within the target."""
    caps = np.asarray(caps, dtype=float)
    if sinr_eff <= 0.0:
        return np.zeros(caps.shape, dtype=int)
    s = np.minimum(sinr_eff, np.exp2(caps) - 1.0)
    capacity = np.log2(1.0 + s)
    dispersion = (1.0 - (1.0 + s) ** -2) * LOG2E_SQ
    bound = n_re * capacity + 0.5 * math.log2(n_re) - np.sqrt(n_re * dispersion) * ndtri(1.0 - bler_target)
    tb = np.clip(np.floor(bound), 0, np.floor(n_re * caps)).astype(int)
    # one bit of rounding slack at the boundary
    over = _bler_vector(sinr_eff, np.maximum(tb, 1), np.full(caps.shape, n_re), caps) > bler_target
    return np.where(over, np.maximum(tb - 1, 0), tb)


def select_mcs_for_prbs(sinr_eff: float, bler_target: float, n_prb: int, table: McsTable,
                        cfg: ScenarioConfig) -> McsSelection:
    """Transport block that fills exactly ``n_prb`` PRBs at the BLER target.

    The block is sized to the largest bit count meeting the target under the entry's
    modulation, capped at the table's top efficiency; the entry is the highest one whose
    nominal rate fits that block. Below the lowest entry the nominal lowest-rate block is used.
    """
    n_re = n_prb * data_re_per_prb(cfg)
    nominal = np.floor(n_re * table.se).astype(int)
    sized = np.minimum(max_tb_bits(sinr_eff, bler_target, n_re, table.caps), nominal[-1])
    fits = np.flatnonzero((sized >= nominal) & (sized > 0))
    if fits.size:
        idx = int(fits[-1])
        tb_bits = int(sized[idx])
    else:
        idx, tb_bits = 0, max(int(nominal[0]), 1)
    predicted = bler(sinr_eff, tb_bits, n_re, table[idx])
    assert not fits.size or predicted <= bler_target
    return McsSelection(table[idx], n_prb, tb_bits, predicted)


def decode(attempts: Sequence[float], mcs: McsEntry, tb_bits: int, n_re: int,
           rng: np.random.Generator) -> bool:
    """Chase-combining decode: attempt SINRs add up; success iff a uniform draw exceeds the BLER."""
    if not attempts:
        raise ValueError("decode needs at least one attempt")
    combined = float(sum(attempts))
    return rng.random() > bler(combined, tb_bits, n_re, mcs)


# Channel quality reports

@dataclass(frozen=True)
class CqiReport:
    ue: int
    sinr_eff_db: float
    cqi_index: int
    generated_tti: int
    delivered_tti: int

    @property
    def sinr_linear(self) -> float:
        return 10 ** (self.sinr_eff_db / 10)

    def visible(self, now_tti: int) -> bool:
        return self.delivered_tti <= now_tti


def make_cqi_report(ue: int, sinr_eff: float, table: McsTable, cfg: ScenarioConfig, tti: int) -> CqiReport:
    """Quantize a wideband effective SINR (floor to ``cqi_quant_db`` steps) into a report."""
    sinr_db = 10 * math.log10(max(sinr_eff, 1e-30))
    if cfg.cqi_quant_db > 0:
        sinr_db = math.floor(sinr_db / cfg.cqi_quant_db) * cfg.cqi_quant_db
    return CqiReport(
        ue=ue,
        sinr_eff_db=sinr_db,
        cqi_index=table.cqi_index(10 ** (sinr_db / 10)),
        generated_tti=tti,
        delivered_tti=tti + cfg.cqi_delay_tti,
    )
