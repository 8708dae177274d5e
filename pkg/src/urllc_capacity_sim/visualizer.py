import json
from pathlib import Path
from typing import Dict, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from .channel import Topology
from .config import ScenarioConfig, scenario_hash
from .logger import SimLogger


def _header(kind: str, cfg: Optional[ScenarioConfig], extra: Optional[Dict] = None) -> str:
    lines = [f"# schema: {kind} v1"]
    if cfg is not None:
        lines.append(f"# scenario_hash: {scenario_hash(cfg)}")
        lines.append(f"# seed: {cfg.seed}")
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    return "\n".join(lines) + "\n"


def read_table(path) -> pd.DataFrame:
    """Read any CSV written by ResultWriter (schema comments skipped)."""
    return pd.read_csv(path, comment='#')


class ResultWriter:
    """Writes run artifacts; every file carries the scenario hash and seed."""

    def __init__(self, output_dir: str = "results", logger: Optional[SimLogger] = None):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logger or SimLogger()

    def write_csv(self, name: str, frame: pd.DataFrame, kind: str, cfg: Optional[ScenarioConfig] = None,
                  extra: Optional[Dict] = None) -> Path:
        path = self.output_dir / name
        with open(path, 'w', encoding='utf-8', newline='') as fh:
            fh.write(_header(kind, cfg, extra))
            frame.to_csv(fh, index=False)
        self.logger.debug(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, name: str, payload: Dict) -> Path:
        path = self.output_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding='utf-8')
        self.logger.debug(f"Wrote {path}")
        return path

    def write_ledger(self, result, name: str = 'ledger.csv') -> Path:
        return self.write_csv(name, result.ledger_frame(), 'ledger', result.cfg,
                              {'replication': result.replication, 'warmup_s': repr(result.warmup_s)})

    def write_tti(self, result, name: str = 'tti.csv') -> Path:
        return self.write_csv(name, result.tti_frame(), 'tti', result.cfg, {'replication': result.replication})

    def write_ecdf(self, ecdf, label: str, cfg: Optional[ScenarioConfig] = None) -> Path:
        return self.write_csv(f"ecdf_{label}.csv", ecdf.to_frame(), 'ecdf', cfg, {'samples': ecdf.count})

    def write_scenario(self, cfg: ScenarioConfig, name: str = 'scenario.cfg') -> Path:
        path = self.output_dir / name
        path.write_text(f"# scenario_hash: {scenario_hash(cfg)}\n" + cfg.to_text(), encoding='utf-8')
        return path

    def write_sweep(self, sweep, cfg: ScenarioConfig, name: str = 'sweep.csv') -> Path:
        baselines = {f"mu_be_{s}_bps": repr(v) for s, v in sorted(sweep.baselines.items())}
        return self.write_csv(name, sweep.to_frame(), 'sweep', cfg, baselines)

    def write_topology(self, topology: Topology) -> Path:
        topology.dump_csv(self.output_dir)
        return self.output_dir


class PlotRenderer:
    """Optional PNG rendering of the emitted plot data."""

    def __init__(self, output_dir: str = "results", logger: Optional[SimLogger] = None):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logger or SimLogger()
        sns.set_theme(style='whitegrid')

    def _save(self, fig, name: str) -> Path:
        path = self.output_dir / name
        fig.tight_layout()
        fig.savefig(path, dpi=150, bbox_inches='tight')
        plt.close(fig)
        self.logger.log(f"Rendered {path}")
        return path

    def render_ecdf(self, frames: Dict[str, pd.DataFrame], name: str, xlabel: str,
                    scale: float = 1.0, log_tail: bool = False) -> Optional[Path]:
        """Step plot of one or more ``value,cum_prob`` tables."""
        try:
            fig, ax = plt.subplots(figsize=(8, 5))
            for label, frame in frames.items():
                finite = frame[np.isfinite(frame['value'])]
                y = 1.0 - finite['cum_prob'] if log_tail else finite['cum_prob']
                ax.step(finite['value'] * scale, y, where='post', label=label)
            if log_tail:
                ax.set_yscale('log')
                ax.set_ylabel('CCDF')
            else:
                ax.set_ylabel('ECDF')
            ax.set_xlabel(xlabel)
            ax.legend()
            return self._save(fig, name)
        except Exception as e:
            self.logger.log_error(f"Error creating {name}: {e}")
            plt.close('all')
            return None

    def render_capacity(self, sweep_frame: pd.DataFrame, name: str = 'capacity_vs_latency.png') -> Optional[Path]:
        """Supported load against latency target, one line per (rho, payload, scheduler)."""
        try:
            data = sweep_frame.dropna(subset=['omega_star_mbps']).copy()
            data['series'] = data.apply(
                lambda r: f"rho={r['rho']:g}, B={int(r['payload_B'])}, {r['scheduler']}", axis=1)
            fig, ax = plt.subplots(figsize=(8, 5))
            sns.lineplot(data=data, x='phi_ms', y='omega_star_mbps', hue='series', marker='o', ax=ax)
            ax.set_xscale('log')
            ax.set_xlabel('Latency target (ms)')
            ax.set_ylabel('Supported offered load (Mbps)')
            return self._save(fig, name)
        except Exception as e:
            self.logger.log_error(f"Error creating {name}: {e}")
            plt.close('all')
            return None

    def render_cost(self, sweep_frame: pd.DataFrame, name: str = 'throughput_cost.png') -> Optional[Path]:
        try:
            data = sweep_frame.dropna(subset=['psi_pct']).copy()
            data['target'] = data.apply(lambda r: f"{r['phi_ms']:g} ms / {r['rho']:g}", axis=1)
            fig, ax = plt.subplots(figsize=(9, 5))
            sns.barplot(data=data, x='target', y='psi_pct', hue='scheduler', ax=ax)
            ax.set_xlabel('Latency target / outage probability')
            ax.set_ylabel('Throughput cost (%)')
            ax.set_ylim(top=100)
            return self._save(fig, name)
        except Exception as e:
            self.logger.log_error(f"Error creating {name}: {e}")
            plt.close('all')
            return None

    def render_layout(self, topology: Topology, name: str = 'layout.png') -> Optional[Path]:
        try:
            cells, ues = topology.to_frames()
            fig, ax = plt.subplots(figsize=(8, 6))
            sns.scatterplot(data=ues, x='x', y='y', hue='serving_cell', palette='tab20', s=18, legend=False, ax=ax)
            ax.scatter(cells['x'], cells['y'], marker='^', s=120, color='black', label='gNB')
            for rec in cells.to_dict('records'):
                ax.annotate(str(int(rec['cell_id'])), (rec['x'], rec['y']), textcoords='offset points',
                            xytext=(4, 4))
            width, depth = topology.hall_size
            ax.set_xlim(0, width)
            ax.set_ylim(0, depth)
            ax.set_aspect('equal')
            ax.set_xlabel('x (m)')
            ax.set_ylabel('y (m)')
            ax.legend(loc='upper right')
            return self._save(fig, name)
        except Exception as e:
            self.logger.log_error(f"Error creating {name}: {e}")
            plt.close('all')
            return None
