"""
Scenario configuration: parsing, validation, unit conversions and seeding policy.
"""
import hashlib
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

SUPPORTED_SCS_HZ = (15e3, 30e3, 60e3, 120e3)
TRAFFIC_MODES = ('urllc_ftp3', 'best_effort')
SCHEDULERS = ('pf', 'et')
FADING_MODELS = ('rayleigh', 'none')
SINR_MAPPINGS = ('miesm', 'eesm')
PRB_ALLOCATIONS = ('staggered', 'lowest')

# 14 symbols per 0.5 ms slot at 30 kHz
SLOT_SYMBOLS = 14
REFERENCE_SYMBOL_S = 0.0005 / SLOT_SYMBOLS


class ScenarioParseError(ValueError):
    """Malformed scenario text."""

    def __init__(self, line_no: int, line: str, reason: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {reason}: {line.strip()!r}")


class ScenarioValidationError(ValueError):
    """A scenario field violates its invariant."""

    def __init__(self, field_name: str, reason: str):
        self.field = field_name
        super().__init__(f"{field_name}: {reason}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full declarative description of one simulation run."""
    # topology
    num_cells: int = 12
    ues_per_cell: int = 10
    inter_site_distance_m: float = 20.0
    grid_columns: int = 0
    hall_margin_m: float = 10.0
    bs_height_m: float = 10.0
    ue_height_m: float = 1.5

    # radio
    carrier_freq_hz: float = 4e9
    bandwidth_hz: float = 40e6
    scs_hz: float = 30e3
    prb_count: int = 100
    tti_symbols: int = 4
    overhead_symbols: int = 1
    tx_power_dbm: float = 25.0
    noise_figure_db: float = 9.0
    antenna_gain_dbi: float = 0.0
    rx_gain_db: float = 3.0
    pathloss_model: str = 'inf-dh-nlos'
    shadowing_std_db: float = 4.0
    fading_model: str = 'rayleigh'
    fading_autocorr: float = 0.9
    fading_coherence_prbs: int = 1
    sinr_mapping: str = 'miesm'

    # traffic
    payload_B: int = 50
    arrival_rate_lambda: float = 100.0
    traffic_mode: str = 'urllc_ftp3'

    # MAC
    scheduler: str = 'pf'
    prb_allocation: str = 'staggered'
    bler_target: float = 0.01
    prep_delay_sym: float = 2.5
    decode_delay_sym: float = 4.5
    harq_feedback_delay_sym: float = 4.5
    max_harq_retx: int = 4
    harq_processes: int = 16
    cqi_period_tti: int = 5
    cqi_delay_tti: int = 2
    cqi_quant_db: float = 1.0
    pf_time_constant_tti: float = 100.0
    pf_initial_throughput_bps: float = 1000.0

    # targets and run control
    latency_target_ms: float = 1.0
    outage_prob: float = 1e-2
    warmup_tti: int = 2000
    horizon_s: float = 10.0
    target_packets: int = 100000
    seed: int = 1

    def __post_init__(self):
        # Counts
        for name in ('num_cells', 'ues_per_cell', 'prb_count', 'tti_symbols', 'harq_processes',
                     'cqi_period_tti', 'fading_coherence_prbs', 'target_packets'):
            if getattr(self, name) < 1:
                raise ScenarioValidationError(name, "must be >= 1")
        for name in ('overhead_symbols', 'max_harq_retx', 'cqi_delay_tti', 'warmup_tti',
                     'grid_columns', 'payload_B'):
            if getattr(self, name) < 0:
                raise ScenarioValidationError(name, "must be >= 0")
        if self.overhead_symbols >= self.tti_symbols:
            raise ScenarioValidationError('overhead_symbols', "must be smaller than tti_symbols")

        # Probabilities and targets
        if not 0.0 < self.bler_target < 1.0:
            raise ScenarioValidationError('bler_target', "must lie in (0, 1)")
        if not 0.0 < self.outage_prob < 1.0:
            raise ScenarioValidationError('outage_prob', "must lie in (0, 1)")
        if not self.latency_target_ms > 0:
            raise ScenarioValidationError('latency_target_ms', "must be positive")
        if self.arrival_rate_lambda < 0 or math.isnan(self.arrival_rate_lambda):
            raise ScenarioValidationError('arrival_rate_lambda', "must be >= 0")

        # Numerology
        if not any(math.isclose(self.scs_hz, s) for s in SUPPORTED_SCS_HZ):
            raise ScenarioValidationError('scs_hz', "must be one of 15, 30, 60, 120 kHz")
        if self.prb_count * 12 * self.scs_hz > self.bandwidth_hz * (1 + 1e-9):
            raise ScenarioValidationError(
                'prb_count', f"{self.prb_count} PRBs x 12 x {self.scs_hz:g} Hz exceed bandwidth {self.bandwidth_hz:g} Hz")

        # Delays and geometry
        for name in ('prep_delay_sym', 'decode_delay_sym', 'harq_feedback_delay_sym', 'cqi_quant_db',
                     'shadowing_std_db', 'hall_margin_m', 'horizon_s'):
            if getattr(self, name) < 0:
                raise ScenarioValidationError(name, "must be >= 0")
        for name in ('inter_site_distance_m', 'carrier_freq_hz', 'bs_height_m', 'ue_height_m',
                     'pf_time_constant_tti', 'pf_initial_throughput_bps'):
            if not getattr(self, name) > 0:
                raise ScenarioValidationError(name, "must be positive")
        if not 0.0 <= self.fading_autocorr <= 1.0:
            raise ScenarioValidationError('fading_autocorr', "must lie in [0, 1]")

        # Enumerations
        for name, allowed in (('traffic_mode', TRAFFIC_MODES), ('scheduler', SCHEDULERS),
                              ('fading_model', FADING_MODELS), ('sinr_mapping', SINR_MAPPINGS),
                              ('prb_allocation', PRB_ALLOCATIONS)):
            if getattr(self, name) not in allowed:
                raise ScenarioValidationError(name, f"must be one of {', '.join(allowed)}")
        if self.traffic_mode == 'urllc_ftp3' and self.payload_B < 1:
            raise ScenarioValidationError('payload_B', "must be >= 1 for urllc_ftp3 traffic")

    @property
    def latency_target_s(self) -> float:
        return self.latency_target_ms * 1e-3

    @property
    def num_ues(self) -> int:
        return self.num_cells * self.ues_per_cell

    def to_text(self) -> str:
        """Canonical scenario text; load_scenario(cfg.to_text()) == cfg."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind in (int, 'int'):
        try:
            return int(raw)
        except ValueError:
            number = float(raw)
        if not number.is_integer():
            raise ValueError(f"expected an integer, got {raw}")
        return int(number)
    if kind in (float, 'float'):
        return float(raw)
    return raw


def _build(values: Dict[str, object], base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    try:
        if base is None:
            return ScenarioConfig(**values)
        return replace(base, **values)
    except TypeError as e:
        raise ScenarioValidationError('scenario', str(e)) from e


def load_scenario(text: str) -> ScenarioConfig:
    """Parse scenario text (``key = value`` lines) into a validated, frozen config."""
    values: Dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        content = line.split('#', 1)[0].strip()
        if not content:
            continue
        if '=' not in content:
            raise ScenarioParseError(line_no, line, "expected 'key = value'")
        key, raw = (part.strip() for part in content.split('=', 1))
        if not key or not raw or any(ch.isspace() for ch in key):
            raise ScenarioParseError(line_no, line, "malformed key or empty value")
        if key in values:
            raise ScenarioParseError(line_no, line, f"duplicate key {key}")
        if key not in _FIELD_TYPES:
            raise ScenarioValidationError(key, "unknown scenario key")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as e:
            raise ScenarioValidationError(key, str(e)) from e
    return _build(values)


def apply_overrides(cfg: ScenarioConfig, overrides: Iterable[str]) -> ScenarioConfig:
    """Apply ``key=value`` overrides (CLI ``--set``) on top of a loaded config."""
    values: Dict[str, object] = {}
    for item in overrides:
        if '=' not in item:
            raise ScenarioParseError(0, item, "override must be key=value")
        key, raw = (part.strip() for part in item.split('=', 1))
        if key not in _FIELD_TYPES:
            raise ScenarioValidationError(key, "unknown scenario key")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as e:
            raise ScenarioValidationError(key, str(e)) from e
    return _build(values, cfg) if values else cfg


def load_scenario_file(path: Optional[str], overrides: Iterable[str] = ()) -> ScenarioConfig:
    text = Path(path).read_text(encoding='utf-8') if path else ''
    return apply_overrides(load_scenario(text), overrides)


def symbol_duration(cfg: ScenarioConfig) -> float:
    """Average OFDM symbol duration (with cyclic prefix) in seconds."""
    return REFERENCE_SYMBOL_S * (30e3 / cfg.scs_hz)


def tti_duration(cfg: ScenarioConfig) -> float:
    return cfg.tti_symbols * symbol_duration(cfg)


def offered_load(cfg: ScenarioConfig) -> float:
    """Total offered network load in bits/s: C x (K x B x 8 x lambda)."""
    if cfg.traffic_mode != 'urllc_ftp3':
        raise ValueError("offered load is undefined for best_effort traffic (infinite payload)")
    return cfg.num_cells * (cfg.ues_per_cell * cfg.payload_B * 8 * cfg.arrival_rate_lambda)


def scenario_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha1(cfg.to_text().encode('utf-8')).hexdigest()[:12]


def derive_seed(master: int, stream: str, *indices: int) -> int:
    """Sub-seed for one named random stream; adding streams never perturbs existing ones."""
    key = ':'.join([str(master), stream] + [str(i) for i in indices])
    digest = hashlib.blake2b(key.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def rng_stream(cfg: ScenarioConfig, stream: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, stream, *indices))
