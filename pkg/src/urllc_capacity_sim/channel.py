"""
Factory deployment and radio channel: cell grid, UE dropping, RSRP attachment,
pathloss with shadowing, per-PRB fading and SINR.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import ScenarioConfig, ScenarioValidationError, rng_stream

DATA_DIR = Path(__file__).parent / 'data'
THERMAL_NOISE_DBM_HZ = -174.0
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class PathlossModel:
    name: str
    a: float
    b: float
    e: float


@lru_cache(maxsize=None)
def load_pathloss_models(path: Optional[str] = None) -> Dict[str, PathlossModel]:
    """Read the coefficient sets shipped in ``data/pathloss_models.csv``."""
    frame = pd.read_csv(path or DATA_DIR / 'pathloss_models.csv', comment='#')
    return {
        rec['name']: PathlossModel(rec['name'], float(rec['A']), float(rec['B']), float(rec['E']))
        for rec in frame.to_dict('records')
    }


def get_pathloss_model(cfg: ScenarioConfig) -> PathlossModel:
    models = load_pathloss_models()
    if cfg.pathloss_model not in models:
        raise ScenarioValidationError('pathloss_model', f"unknown model, available: {', '.join(models)}")
    return models[cfg.pathloss_model]


def pathloss_db(distance_3d, cfg: ScenarioConfig):
    """Deterministic pathloss in dB; distances below 1 m are clamped to 1 m."""
    model = get_pathloss_model(cfg)
    d = np.maximum(np.asarray(distance_3d, dtype=float), MIN_DISTANCE_M)
    pl = model.a + model.b * np.log10(d) + model.e * np.log10(cfg.carrier_freq_hz / 1e9)
    return float(pl) if np.ndim(pl) == 0 else pl


def noise_per_prb_mw(cfg: ScenarioConfig) -> float:
    """Thermal noise over one PRB bandwidth, including the receiver noise figure."""
    noise_dbm = THERMAL_NOISE_DBM_HZ + 10 * math.log10(12 * cfg.scs_hz) + cfg.noise_figure_db
    return 10 ** (noise_dbm / 10)


def grid_shape(cfg: ScenarioConfig) -> Tuple[int, int]:
    """(columns, rows) of the cell grid; 12 cells give 4 x 3."""
    columns = cfg.grid_columns or math.ceil(math.sqrt(cfg.num_cells))
    columns = min(columns, cfg.num_cells)
    return columns, math.ceil(cfg.num_cells / columns)


@dataclass
class Topology:
    cell_positions: np.ndarray      # (C, 3) meters
    ue_positions: np.ndarray        # (U, 3) meters
    dropped_in: np.ndarray          # (U,) cell region each UE was dropped in
    serving_cell: np.ndarray        # (U,) attached cell
    large_scale_gain: np.ndarray    # (C, U) linear
    hall_size: Tuple[float, float]

    @property
    def num_cells(self) -> int:
        return self.cell_positions.shape[0]

    @property
    def num_ues(self) -> int:
        return self.ue_positions.shape[0]

    def ues_of_cell(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.serving_cell == cell)

    def to_frames(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        cells = pd.DataFrame(self.cell_positions, columns=['x', 'y', 'z'])
        cells.insert(0, 'cell_id', np.arange(self.num_cells))
        ues = pd.DataFrame(self.ue_positions, columns=['x', 'y', 'z'])
        ues.insert(0, 'ue_id', np.arange(self.num_ues))
        ues['serving_cell'] = self.serving_cell
        return cells, ues

    def dump_csv(self, directory) -> Tuple[Path, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        cells, ues = self.to_frames()
        cells.to_csv(out / 'cells.csv', index=False)
        ues.to_csv(out / 'ues.csv', index=False)
        return out / 'cells.csv', out / 'ues.csv'


def _region_bounds(index: int, count: int, coord: float, spacing: float, extent: float) -> Tuple[float, float]:
    low = 0.0 if index == 0 else coord - spacing / 2
    high = extent if index == count - 1 else coord + spacing / 2
    return low, high


def drop_topology(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> Topology:
    """Place cells on a grid, drop K UEs uniformly per cell region and attach by strongest gain."""
    rng = rng if rng is not None else rng_stream(cfg, 'topology')
    columns, rows = grid_shape(cfg)
    d, margin = cfg.inter_site_distance_m, cfg.hall_margin_m
    width = (columns - 1) * d + 2 * margin
    depth = (rows - 1) * d + 2 * margin

    cells = np.zeros((cfg.num_cells, 3))
    ues = np.zeros((cfg.num_ues, 3))
    dropped_in = np.repeat(np.arange(cfg.num_cells), cfg.ues_per_cell)
    for c in range(cfg.num_cells):
        col, row = c % columns, c // columns
        # last row may be partial; its cells still span the hall depth
        cells[c] = (margin + col * d, margin + row * d, cfg.bs_height_m)
        x_low, x_high = _region_bounds(col, columns, cells[c, 0], d, width)
        y_low, y_high = _region_bounds(row, rows, cells[c, 1], d, depth)
        block = slice(c * cfg.ues_per_cell, (c + 1) * cfg.ues_per_cell)
        ues[block, 0] = rng.uniform(x_low, x_high, cfg.ues_per_cell)
        ues[block, 1] = rng.uniform(y_low, y_high, cfg.ues_per_cell)
    ues[:, 2] = cfg.ue_height_m

    distance = np.linalg.norm(cells[:, None, :] - ues[None, :, :], axis=2)
    shadowing = rng.normal(0.0, cfg.shadowing_std_db, distance.shape) if cfg.shadowing_std_db > 0 \
        else np.zeros(distance.shape)
    gain_db = cfg.antenna_gain_dbi - pathloss_db(distance, cfg) - shadowing
    gain = 10 ** (gain_db / 10)
    return Topology(
        cell_positions=cells,
        ue_positions=ues,
        dropped_in=dropped_in,
        serving_cell=np.argmax(gain, axis=0),
        large_scale_gain=gain,
        hall_size=(width, depth),
    )


class LinkState:
    """Large-scale gains plus per-PRB Rayleigh fading evolving as a first-order autoregression per TTI."""

    def __init__(self, topology: Topology, cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None):
        self.topology = topology
        self.gain = topology.large_scale_gain
        self.serving = topology.serving_cell
        self.enabled = cfg.fading_model == 'rayleigh'
        self.autocorr = cfg.fading_autocorr
        self.rng = rng if rng is not None else rng_stream(cfg, 'fading')
        self.prb_group = np.arange(cfg.prb_count) // cfg.fading_coherence_prbs
        self.tti = 0
        shape = self.gain.shape + (int(self.prb_group[-1]) + 1,)
        self._h = self._complex_normal(shape) if self.enabled else None

    def _complex_normal(self, shape) -> np.ndarray:
        return (self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape)) / math.sqrt(2)

    def advance(self, tti: int) -> None:
        """Move the fading process to ``tti``; skipped TTIs are folded into one exact AR step."""
        steps = tti - self.tti
        if steps <= 0:
            return
        self.tti = tti
        if not self.enabled or self.autocorr == 1.0:
            return
        a = self.autocorr ** steps
        self._h = a * self._h + math.sqrt(1.0 - a * a) * self._complex_normal(self._h.shape)

    def fading_gain(self, ue: int, prbs: Sequence[int]) -> np.ndarray:
        """Fading power gains of every cell towards ``ue`` on ``prbs``: shape (C, len(prbs))."""
        prbs = np.asarray(prbs)
        if not self.enabled:
            return np.ones((self.gain.shape[0], prbs.size))
        h = self._h[:, ue, self.prb_group[prbs]]
        return h.real ** 2 + h.imag ** 2

    def serving_fading(self) -> np.ndarray:
        """Fading power gains of every UE's serving link over all PRBs: shape (U, P)."""
        num_ues = self.gain.shape[1]
        if not self.enabled:
            return np.ones((num_ues, self.prb_group.size))
        h = self._h[self.serving, np.arange(num_ues)][:, self.prb_group]
        return h.real ** 2 + h.imag ** 2


def rx_gain_linear(cfg: ScenarioConfig) -> float:
    return 10 ** (cfg.rx_gain_db / 10)


def link_budget(ue: int, prbs: Sequence[int], tx_power_mw: np.ndarray, link: LinkState,
                cfg: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray, float]:
    """Signal and interference powers (mW) per PRB for ``ue``.

    ``tx_power_mw`` is the (C, P) per-PRB transmit power of this TTI, zero where a cell is silent.
    """
    prbs = np.asarray(prbs)
    serving = link.serving[ue]
    rx = tx_power_mw[:, prbs] * link.gain[:, ue, None] * link.fading_gain(ue, prbs)
    others = np.ones(rx.shape[0], dtype=bool)
    others[serving] = False
    signal = rx[serving] * rx_gain_linear(cfg)
    interference = rx[others].sum(axis=0)
    return signal, interference, noise_per_prb_mw(cfg)


def sinr_per_prb(ue: int, prbs: Sequence[int], tx_power_mw: np.ndarray, link: LinkState,
                 cfg: ScenarioConfig) -> np.ndarray:
    """Linear SINR of ``ue`` on each of ``prbs`` given the cells transmitting this TTI."""
    signal, interference, noise = link_budget(ue, prbs, tx_power_mw, link, cfg)
    return signal / (noise + interference)
