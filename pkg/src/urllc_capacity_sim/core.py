"""
TTI-driven discrete-event simulation of the downlink MAC: traffic release after the
preparation delay, per-cell scheduling with HARQ priority and segmentation, SINR and
decode per allocation, and per-packet latency bookkeeping.
"""
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .channel import LinkState, Topology, drop_topology, link_budget, noise_per_prb_mw, rx_gain_linear
from .config import ScenarioConfig, rng_stream, scenario_hash, symbol_duration, tti_duration
from .logger import SimLogger
from .phy import (CRC_BITS, AllocationInfeasible, CqiReport, McsEntry, McsTable, data_re_per_prb, decode,
                  load_mcs_table, make_cqi_report, make_mapper, select_mcs, select_mcs_for_prbs)
from .schedulers import SchedulerState, make_scheduler
from .traffic import FullBufferSource, TrafficTrace, generate_traffic

EPS_S = 1e-12

# per-packet columns kept once a packet leaves the air
LEDGER_COLUMNS = {
    'id': np.int64, 'ue': np.int32, 'cell': np.int32, 'size_bytes': np.int32,
    't_arrival': np.float64, 't_first_grant': np.float64, 't_last_grant': np.float64,
    't_decoded': np.float64, 't_dropped': np.float64, 'dropped': np.bool_,
    'n_transmissions': np.int32, 'total_prbs_used': np.int32,
    'queue_delay': np.float64, 'harq_delay': np.float64,
}
LEDGER_FRAME_COLUMNS = ['pkt_id', 'ue', 'cell', 'bytes', 't_arrival', 't_decoded', 'latency_s', 'n_tx',
                        'prbs_total', 'dropped', 'prep_s', 'queue_s', 'tx_s', 'decode_s', 'harq_s']


@dataclass(slots=True)
class PacketRecord:
    """Lifecycle of one FTP3 packet; the atom of every latency KPI."""
    id: int
    ue: int
    cell: int
    size_bytes: int
    t_arrival: float
    t_first_grant: float = math.nan
    t_last_grant: float = math.nan
    t_decoded: float = math.nan
    t_dropped: float = math.nan
    dropped: bool = False
    n_transmissions: int = 0
    total_prbs_used: int = 0
    prep_delay: float = math.nan
    queue_delay: float = math.nan
    tx_delay: float = math.nan
    decode_delay: float = math.nan
    harq_delay: float = math.nan
    remaining_bits: int = field(default=0, repr=False)
    segments_in_flight: int = field(default=0, repr=False)
    next_segment: int = field(default=0, repr=False)

    @property
    def decoded(self) -> bool:
        return not math.isnan(self.t_decoded)

    @property
    def in_flight(self) -> bool:
        return not self.decoded and not self.dropped

    @property
    def latency(self) -> float:
        """Seconds from PDCP arrival to successful decode; +inf when dropped, nan while in flight."""
        if self.dropped:
            return math.inf
        return self.t_decoded - self.t_arrival


@dataclass
class HarqProcess:
    """A transport block in flight."""
    packet_id: int
    ue: int
    cell: int
    segment_index: int
    tb_bits: int
    payload_bits: int
    mcs: McsEntry
    n_prb: int
    attempt_sinrs: List[float] = field(default_factory=list)
    attempts: int = 0
    next_eligible_time: float = 0.0


@dataclass
class Allocation:
    ue: int
    process: HarqProcess
    prbs: np.ndarray
    is_retx: bool


class PacketLedger:
    """Packets by id: live records while in the air, numpy columns once decoded or dropped."""

    def __init__(self, capacity: int = 4096):
        self.live: Dict[int, PacketRecord] = {}
        self._columns = {name: np.empty(capacity, dtype=dtype) for name, dtype in LEDGER_COLUMNS.items()}
        self._size = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, packet_id: int) -> PacketRecord:
        return self.live[packet_id]

    def append(self, rec: PacketRecord) -> None:
        self.live[rec.id] = rec
        self._count += 1

    def retire(self, rec: PacketRecord) -> None:
        """Move a finished packet into the columns once no segment of it is left in the air."""
        if rec.in_flight or rec.segments_in_flight > 0 or rec.id not in self.live:
            return
        if self._size == self._columns['id'].size:
            self._columns = {name: np.concatenate([column, np.empty_like(column)])
                             for name, column in self._columns.items()}
        for name, column in self._columns.items():
            column[self._size] = getattr(rec, name)
        self._size += 1
        del self.live[rec.id]

    def columns(self) -> Dict[str, np.ndarray]:
        """Every packet ordered by id; packets still in flight carry NaN decode times."""
        live = list(self.live.values())
        merged = {
            name: np.concatenate([self._columns[name][:self._size],
                                  np.array([getattr(r, name) for r in live], dtype=dtype)])
            for name, dtype in LEDGER_COLUMNS.items()
        }
        order = np.argsort(merged['id'], kind='stable')
        return {name: column[order] for name, column in merged.items()}


@dataclass
class SimulationResult:
    cfg: ScenarioConfig
    packets: Dict[str, np.ndarray]  # LEDGER_COLUMNS, one entry per packet ordered by id
    decoded_bits: np.ndarray      # (TTIs, cells) payload bits of successfully decoded TBs
    prb_usage: np.ndarray         # (TTIs, cells)
    tti_s: float
    warmup_s: float
    end_s: float
    first_tx_attempts: int
    first_tx_failures: int
    topology: Topology
    replication: int = 0
    stopped_early: bool = False

    @property
    def window_s(self) -> float:
        return max(self.end_s - self.warmup_s, 0.0)

    @property
    def prep_s(self) -> float:
        return self.cfg.prep_delay_sym * symbol_duration(self.cfg)

    @property
    def decode_s(self) -> float:
        return self.cfg.decode_delay_sym * symbol_duration(self.cfg)

    @property
    def n_packets(self) -> int:
        return int(self.packets['id'].size)

    @property
    def decoded_mask(self) -> np.ndarray:
        return ~np.isnan(self.packets['t_decoded'])

    @property
    def dropped_mask(self) -> np.ndarray:
        return self.packets['dropped'].astype(bool)

    @property
    def in_flight_mask(self) -> np.ndarray:
        return ~(self.decoded_mask | self.dropped_mask)

    @property
    def measured_mask(self) -> np.ndarray:
        """Packets that arrived after the warm-up span."""
        return self.packets['t_arrival'] >= self.warmup_s

    @property
    def n_decoded(self) -> int:
        return int(self.decoded_mask.sum())

    @property
    def n_dropped(self) -> int:
        return int(self.dropped_mask.sum())

    @property
    def n_in_flight(self) -> int:
        return int(self.in_flight_mask.sum())

    def latencies(self, censored: bool = True) -> np.ndarray:
        """Per-packet latency, +inf when dropped.

        Packets still in flight get their age at the end of the run when ``censored``
        (a lower bound on their latency), NaN otherwise.
        """
        lat = self.packets['t_decoded'] - self.packets['t_arrival']
        lat[self.dropped_mask] = math.inf
        in_flight = self.in_flight_mask
        lat[in_flight] = self.end_s - self.packets['t_arrival'][in_flight] if censored else math.nan
        return lat

    def _rebuild(self, mask: np.ndarray) -> List[PacketRecord]:
        rows = {name: column[mask].tolist() for name, column in self.packets.items()}
        records = []
        for i in range(int(mask.sum())):
            rec = PacketRecord(**{name: rows[name][i] for name in LEDGER_COLUMNS})
            if rec.decoded:
                rec.prep_delay, rec.tx_delay, rec.decode_delay = self.prep_s, self.tti_s, self.decode_s
            records.append(rec)
        return records

    @property
    def records(self) -> List[PacketRecord]:
        """Packet records rebuilt from the ledger columns."""
        return self._rebuild(np.ones(self.n_packets, dtype=bool))

    def measured_records(self) -> List[PacketRecord]:
        return self._rebuild(self.measured_mask)

    def ledger_frame(self) -> pd.DataFrame:
        p = self.packets
        decoded = self.decoded_mask
        return pd.DataFrame({
            'pkt_id': p['id'], 'ue': p['ue'], 'cell': p['cell'], 'bytes': p['size_bytes'],
            't_arrival': p['t_arrival'], 't_decoded': p['t_decoded'], 'latency_s': self.latencies(censored=False),
            'n_tx': p['n_transmissions'], 'prbs_total': p['total_prbs_used'], 'dropped': self.dropped_mask,
            'prep_s': np.where(decoded, self.prep_s, math.nan), 'queue_s': p['queue_delay'],
            'tx_s': np.where(decoded, self.tti_s, math.nan), 'decode_s': np.where(decoded, self.decode_s, math.nan),
            'harq_s': p['harq_delay'],
        }, columns=LEDGER_FRAME_COLUMNS)

    def tti_frame(self) -> pd.DataFrame:
        n_tti, n_cells = self.prb_usage.shape
        return pd.DataFrame({
            'tti': np.repeat(np.arange(n_tti), n_cells),
            'cell': np.tile(np.arange(n_cells), n_tti),
            'prbs_used': self.prb_usage.ravel(),
            'decoded_bits': self.decoded_bits.ravel(),
        })


Decoder = Callable[[List[float], McsEntry, int, int, np.random.Generator], bool]


class Simulator:
    def __init__(self, cfg: ScenarioConfig, logger: Optional[SimLogger] = None, replication: int = 0,
                 decoder: Decoder = decode, table: Optional[McsTable] = None,
                 topology: Optional[Topology] = None, exceedance_limit: Optional[Tuple[float, int]] = None):
        self.cfg = cfg
        self.logger = logger or SimLogger()
        self.replication = replication
        self.decoder = decoder
        self.table = table or load_mcs_table()
        self.mapper = make_mapper(cfg.sinr_mapping)
        self.scheduler = make_scheduler(cfg.scheduler)
        self.full_buffer = FullBufferSource(cfg.num_ues) if cfg.traffic_mode == 'best_effort' else None

        sym = symbol_duration(cfg)
        self.tti_s = tti_duration(cfg)
        self.prep_s = cfg.prep_delay_sym * sym
        self.decode_s = cfg.decode_delay_sym * sym
        self.feedback_s = cfg.harq_feedback_delay_sym * sym
        self.latency_floor_s = self.prep_s + self.tti_s + self.decode_s

        self.topology = topology or drop_topology(cfg, rng_stream(cfg, 'topology', replication))
        self.link = LinkState(self.topology, cfg, rng_stream(cfg, 'fading', replication))
        self.decode_rng = rng_stream(cfg, 'decode', replication)
        self.state = SchedulerState.create(cfg)
        self.cell_ues = [self.topology.ues_of_cell(c) for c in range(cfg.num_cells)]

        self.noise_mw = noise_per_prb_mw(cfg)
        self.rx_gain = rx_gain_linear(cfg)
        self.tx_power_mw = 10 ** (cfg.tx_power_dbm / 10)
        self.reference_power_mw = self.tx_power_mw / cfg.prb_count
        self.re_per_prb = data_re_per_prb(cfg)
        self.full_band_rate = self.re_per_prb * cfg.prb_count / self.tti_s
        if cfg.prb_allocation == 'staggered':
            offsets = [c * cfg.prb_count // cfg.num_cells for c in range(cfg.num_cells)]
        else:
            offsets = [0] * cfg.num_cells
        self.prb_order = [np.roll(np.arange(cfg.prb_count), -o) for o in offsets]

        self.reports: List[Optional[CqiReport]] = [None] * cfg.num_ues
        self._pending_reports: Deque[CqiReport] = deque()
        self.last_interference = np.zeros(cfg.num_ues)
        self.harq_busy = np.zeros(cfg.num_ues, dtype=int)

        self.records = PacketLedger()
        self._events: List[Tuple] = []
        self._seq = itertools.count()
        self._release: List[Tuple[float, int]] = []
        self.warmup_s = cfg.warmup_tti * self.tti_s
        self.decoded_measured = 0
        self.first_tx_attempts = 0
        self.first_tx_failures = 0
        # (latency bound, count): stop once more measured packets than count exceed the bound
        self.exceedance_limit = exceedance_limit
        self.exceedances = 0
        self.stopped_early = False

    # events

    def _push(self, time: float, kind: str, payload) -> None:
        heapq.heappush(self._events, (time, next(self._seq), kind, payload))

    def _process_events(self, now: float) -> None:
        while self._events and self._events[0][0] <= now + EPS_S:
            time, _, kind, payload = heapq.heappop(self._events)
            if kind == 'done':
                self._segment_done(time, *payload)
            elif kind == 'retx':
                self._retx_ready(payload)
            elif kind == 'release':
                self.harq_busy[payload] -= 1
            elif kind == 'drop':
                self._drop(time, payload)

    def _segment_done(self, time: float, packet_id: int, tx_start: float) -> None:
        rec = self.records[packet_id]
        rec.segments_in_flight -= 1
        if rec.dropped:
            self.records.retire(rec)
            return
        rec.t_last_grant = tx_start if math.isnan(rec.t_last_grant) else max(rec.t_last_grant, tx_start)
        if rec.remaining_bits == 0 and rec.segments_in_flight == 0:
            rec.t_decoded = time
            rec.prep_delay = self.prep_s
            rec.queue_delay = rec.t_first_grant - rec.t_arrival - self.prep_s
            rec.tx_delay = self.tti_s
            rec.decode_delay = self.decode_s
            rec.harq_delay = rec.t_last_grant - rec.t_first_grant
            assert rec.latency >= self.latency_floor_s - 1e-9, "latency below processing floor"
            if rec.t_arrival >= self.warmup_s:
                self.decoded_measured += 1
                if self.exceedance_limit is not None and rec.latency > self.exceedance_limit[0]:
                    self.exceedances += 1
            self.records.retire(rec)

    def _retx_ready(self, proc: HarqProcess) -> None:
        if proc.packet_id >= 0 and self.records[proc.packet_id].dropped:
            rec = self.records[proc.packet_id]
            self.harq_busy[proc.ue] -= 1
            rec.segments_in_flight -= 1
            self.records.retire(rec)
            return
        self.state.retransmissions[proc.cell].append(proc)

    def _drop(self, time: float, packet_id: int) -> None:
        rec = self.records[packet_id]
        rec.segments_in_flight -= 1
        if not rec.dropped:
            rec.dropped = True
            rec.t_dropped = time
            rec.remaining_bits = 0
            if self.exceedance_limit is not None and rec.t_arrival >= self.warmup_s:
                self.exceedances += 1
        self.records.retire(rec)

    # traffic

    def _admit(self, trace: Optional[TrafficTrace], cursor: int, until: float) -> int:
        """Create records for arrivals up to ``until`` and queue them for release after prep delay."""
        if trace is None:
            return cursor
        while cursor < len(trace) and trace.times[cursor] <= until + EPS_S:
            ue = int(trace.ues[cursor])
            rec = PacketRecord(
                id=len(self.records), ue=ue, cell=int(self.topology.serving_cell[ue]),
                size_bytes=int(trace.sizes[cursor]), t_arrival=float(trace.times[cursor]),
            )
            rec.remaining_bits = rec.size_bytes * 8
            self.records.append(rec)
            heapq.heappush(self._release, (rec.t_arrival + self.prep_s, rec.id))
            cursor += 1
        return cursor

    def _release_ready(self, now: float) -> None:
        while self._release and self._release[0][0] <= now + EPS_S:
            _, packet_id = heapq.heappop(self._release)
            rec = self.records[packet_id]
            self.state.new_data[rec.ue].append(rec)

    def _has_data(self, ue: int) -> bool:
        if self.full_buffer is not None:
            return self.full_buffer.has_data(ue)
        queue = self.state.new_data[ue]
        while queue and queue[0].dropped:
            queue.popleft()
        return bool(queue)

    # channel quality

    def _generate_cqi(self, tti: int) -> None:
        self.link.advance(tti)
        num_ues = self.cfg.num_ues
        gain = self.link.gain[self.link.serving, np.arange(num_ues)]
        # signal and the stored interference share the full-band reference power
        signal = self.reference_power_mw * gain[:, None] * self.link.serving_fading() * self.rx_gain
        sinr = signal / (self.noise_mw + self.last_interference[:, None])
        effective = self.mapper.effective_rows(sinr)
        for ue in range(num_ues):
            self._pending_reports.append(make_cqi_report(ue, float(effective[ue]), self.table, self.cfg, tti))

    def _note_interference(self, ue: int, interference: np.ndarray, own_power_mw: float) -> None:
        """Keep the mean interference of ``ue``'s last allocation, rescaled to the full-band reference.

        The rescaling preserves the signal-to-interference ratio the UE saw under its own
        cell's power concentration.
        """
        self.last_interference[ue] = float(interference.mean()) * self.reference_power_mw / own_power_mw

    def _deliver_cqi(self, tti: int) -> None:
        while self._pending_reports and self._pending_reports[0].visible(tti):
            report = self._pending_reports.popleft()
            self.reports[report.ue] = report

    def _cqi_sinr(self, ue: int) -> float:
        report = self.reports[ue]
        # no report yet: zero SINR makes link adaptation fall back to the lowest entry
        return report.sinr_linear if report is not None else 0.0

    def _instantaneous_rate(self, ue: int) -> float:
        report = self.reports[ue]
        entry = self.table[report.cqi_index] if report is not None else self.table.lowest
        return entry.se * self.full_band_rate

    # scheduling

    def schedule_tti(self, cell: int, now: float) -> List[Allocation]:
        """Allocate one cell's PRBs for the TTI starting at ``now``: retransmissions first, then new data."""
        cfg = self.cfg
        order = self.prb_order[cell]
        used = 0
        allocations: List[Allocation] = []

        waiting = []
        for proc in self.state.retransmissions[cell]:
            if proc.n_prb <= cfg.prb_count - used:
                allocations.append(Allocation(proc.ue, proc, order[used:used + proc.n_prb], True))
                used += proc.n_prb
            else:
                waiting.append(proc)
        self.state.retransmissions[cell] = waiting

        candidates = [int(ue) for ue in self.cell_ues[cell]
                      if self.harq_busy[ue] < cfg.harq_processes and self._has_data(ue)]
        if not candidates or used >= cfg.prb_count:
            return allocations
        ranked = self.scheduler.rank(candidates, self._instantaneous_rate, self.state)

        for ue in ranked:
            if used >= cfg.prb_count:
                break
            sinr = self._cqi_sinr(ue)
            if self.full_buffer is not None:
                used = self._allocate_full_buffer(cell, ue, sinr, now, used, allocations)
            else:
                used = self._allocate_queue(cell, ue, sinr, now, used, allocations)
        return allocations

    def _allocate_full_buffer(self, cell: int, ue: int, sinr: float, now: float, used: int,
                              allocations: List[Allocation]) -> int:
        free = self.cfg.prb_count - used
        sel = select_mcs_for_prbs(sinr, self.cfg.bler_target, free, self.table, self.cfg)
        payload = sel.tb_bits - CRC_BITS
        if payload <= 0:
            return used
        proc = HarqProcess(-1, ue, cell, 0, sel.tb_bits, payload, sel.mcs, free)
        self.harq_busy[ue] += 1
        allocations.append(Allocation(ue, proc, self.prb_order[cell][used:], False))
        return self.cfg.prb_count

    def _allocate_queue(self, cell: int, ue: int, sinr: float, now: float, used: int,
                        allocations: List[Allocation]) -> int:
        cfg = self.cfg
        queue = self.state.new_data[ue]
        while queue and used < cfg.prb_count and self.harq_busy[ue] < cfg.harq_processes:
            rec = queue[0]
            if rec.dropped:
                queue.popleft()
                continue
            free = cfg.prb_count - used
            try:
                sel = select_mcs(sinr, cfg.bler_target, free, rec.remaining_bits, self.table, cfg)
                payload = rec.remaining_bits
            except AllocationInfeasible:
                # segment: fill the residual PRBs, the remainder stays at the head of the queue
                sel = select_mcs_for_prbs(sinr, cfg.bler_target, free, self.table, cfg)
                payload = min(sel.tb_bits - CRC_BITS, rec.remaining_bits)
                if payload <= 0:
                    break
            proc = HarqProcess(rec.id, ue, cell, rec.next_segment, payload + CRC_BITS, payload, sel.mcs, sel.n_prb)
            allocations.append(Allocation(ue, proc, self.prb_order[cell][used:used + sel.n_prb], False))
            used += sel.n_prb
            self.harq_busy[ue] += 1
            rec.next_segment += 1
            rec.segments_in_flight += 1
            rec.remaining_bits -= payload
            if math.isnan(rec.t_first_grant):
                rec.t_first_grant = now
            if rec.remaining_bits == 0:
                queue.popleft()
        return used

    # transmission

    def _transmit(self, tti: int, now: float, per_cell: List[List[Allocation]],
                  decoded_bits: np.ndarray, served: np.ndarray) -> None:
        cfg = self.cfg
        tx_power = np.zeros((cfg.num_cells, cfg.prb_count))
        for cell, allocations in enumerate(per_cell):
            if allocations:
                prbs = np.concatenate([a.prbs for a in allocations])
                # power split uniformly over the PRBs actually allocated
                tx_power[cell, prbs] = self.tx_power_mw / prbs.size
        self.link.advance(tti)
        t_end = now + self.tti_s
        for cell, allocations in enumerate(per_cell):
            for alloc in allocations:
                proc = alloc.process
                signal, interference, noise = link_budget(alloc.ue, alloc.prbs, tx_power, self.link, cfg)
                self._note_interference(alloc.ue, interference, float(tx_power[cell, alloc.prbs[0]]))
                proc.attempt_sinrs.append(self.mapper.effective(signal / (noise + interference), proc.mcs))
                proc.attempts += 1
                ok = self.decoder(proc.attempt_sinrs, proc.mcs, proc.tb_bits, proc.n_prb * self.re_per_prb,
                                  self.decode_rng)
                if proc.attempts == 1 and now >= self.warmup_s:
                    self.first_tx_attempts += 1
                    self.first_tx_failures += 0 if ok else 1
                if proc.packet_id >= 0:
                    rec = self.records[proc.packet_id]
                    rec.n_transmissions += 1
                    rec.total_prbs_used += proc.n_prb

                if ok:
                    decoded_bits[tti, cell] += proc.payload_bits
                    served[alloc.ue] += proc.payload_bits
                    self._push(t_end + self.decode_s + self.feedback_s, 'release', alloc.ue)
                    if proc.packet_id >= 0:
                        self._push(t_end + self.decode_s, 'done', (proc.packet_id, now))
                elif proc.attempts <= cfg.max_harq_retx:
                    proc.next_eligible_time = t_end + self.decode_s + self.feedback_s + self.prep_s
                    self._push(proc.next_eligible_time, 'retx', proc)
                else:
                    self._push(t_end + self.decode_s + self.feedback_s, 'release', alloc.ue)
                    if proc.packet_id >= 0:
                        self._push(t_end + self.decode_s, 'drop', proc.packet_id)

    # main loop

    def run(self) -> SimulationResult:
        cfg = self.cfg
        n_tti = max(int(math.ceil(cfg.horizon_s / self.tti_s - 1e-9)), 0)
        trace = generate_traffic(cfg, cfg.horizon_s, self.replication) if self.full_buffer is None else None
        decoded_bits = np.zeros((n_tti, cfg.num_cells))
        prb_usage = np.zeros((n_tti, cfg.num_cells), dtype=np.int32)
        cursor = 0
        executed = 0
        self.logger.log(f"Starting simulation [{scenario_hash(cfg)}]: {cfg.num_cells} cells x "
                        f"{cfg.ues_per_cell} UEs, {cfg.traffic_mode}, scheduler={cfg.scheduler}, "
                        f"lambda={cfg.arrival_rate_lambda:g}/s, B={cfg.payload_B} bytes, replication={self.replication}")

        for tti in range(n_tti):
            now = tti * self.tti_s
            self._process_events(now)
            cursor = self._admit(trace, cursor, now)
            self._release_ready(now)
            if tti % cfg.cqi_period_tti == 0:
                self._generate_cqi(tti)
            self._deliver_cqi(tti)

            per_cell = [self.schedule_tti(cell, now) for cell in range(cfg.num_cells)]
            served = np.zeros(cfg.num_ues)
            if any(per_cell):
                self._transmit(tti, now, per_cell, decoded_bits, served)
                for cell, allocations in enumerate(per_cell):
                    prb_usage[tti, cell] = sum(a.prbs.size for a in allocations)
            self.state.update(served, self.tti_s)
            executed = tti + 1

            if self.full_buffer is None and self.decoded_measured >= cfg.target_packets:
                break
            if self.exceedance_limit is not None and self.exceedances > self.exceedance_limit[1]:
                self.stopped_early = True
                self.logger.log(f"Stopping after {executed} TTIs: {self.exceedances} measured packets exceeded "
                                f"{self.exceedance_limit[0] * 1e3:g} ms")
                break

        end_s = executed * self.tti_s
        self._process_events(end_s)
        self._admit(trace, cursor, end_s - EPS_S * 2)

        result = SimulationResult(
            cfg=cfg,
            packets=self.records.columns(),
            decoded_bits=decoded_bits[:executed],
            prb_usage=prb_usage[:executed],
            tti_s=self.tti_s,
            warmup_s=min(self.warmup_s, end_s),
            end_s=end_s,
            first_tx_attempts=self.first_tx_attempts,
            first_tx_failures=self.first_tx_failures,
            topology=self.topology,
            replication=self.replication,
            stopped_early=self.stopped_early,
        )
        self.logger.log_run(scenario_hash(cfg), {
            'ttis': executed, 'packets': len(self.records), 'decoded': result.n_decoded,
            'dropped': result.n_dropped, 'in_flight': result.n_in_flight,
        })
        if self.records and result.n_dropped > 0.5 * len(self.records):
            self.logger.warning(f"Systematic drops: {result.n_dropped} of {len(self.records)} packets "
                                f"exhausted {cfg.max_harq_retx} HARQ retransmissions")
        return result


def run_simulation(cfg: ScenarioConfig, logger: Optional[SimLogger] = None, replication: int = 0,
                   exceedance_limit: Optional[Tuple[float, int]] = None) -> SimulationResult:
    """Run one simulation instance to min(horizon, target decoded packets).

    With ``exceedance_limit = (bound_s, count)`` the run also ends once more than ``count``
    measured packets have been dropped or decoded later than ``bound_s``.
    """
    return Simulator(cfg, logger=logger, replication=replication, exceedance_limit=exceedance_limit).run()
