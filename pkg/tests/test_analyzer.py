"""Outage latency, ECDFs, throughput and throughput cost."""
import json
import math

import numpy as np
import pytest

from urllc_capacity_sim.analyzer import (EcdfAccumulator, latency_breakdown, latency_samples, mean_throughput,
                                         outage_latency, prb_ecdf, required_samples, summarize,
                                         throughput_cost)
from urllc_capacity_sim.config import ScenarioConfig
from urllc_capacity_sim.core import PacketRecord, run_simulation
from urllc_capacity_sim.logger import SimLogger

_RUN_CFG = ScenarioConfig(num_cells=2, ues_per_cell=2, arrival_rate_lambda=1000.0, horizon_s=0.2,
                          warmup_tti=100, target_packets=10 ** 6)


def _decoded(pkt_id, latency, prbs=4):
    rec = PacketRecord(id=pkt_id, ue=0, cell=0, size_bytes=50, t_arrival=0.0)
    rec.t_decoded = latency
    rec.total_prbs_used = prbs
    return rec


# ── Outage latency ─────────────────────────────────────────────────────────────

def test_outage_is_nearest_rank_order_statistic():
    rng = np.random.default_rng(11)
    samples = rng.exponential(1e-3, 10 ** 5)
    result = outage_latency(EcdfAccumulator(samples), 1e-2)
    assert result.latency_s == np.sort(samples)[99000 - 1]
    assert result.n_samples == 10 ** 5
    assert result.sufficient


def test_too_few_samples_are_flagged():
    result = outage_latency(EcdfAccumulator(np.linspace(1e-4, 1e-3, 10 ** 5)), 1e-5)
    assert result.required == 10 ** 7
    assert not result.sufficient
    assert result.latency_s is not None
    assert required_samples(1e-2) == 10 ** 4


def test_degenerate_distribution():
    ecdf = EcdfAccumulator([4e-4] * 500)
    for rho in (0.5, 1e-1, 1e-2, 1e-3):
        assert outage_latency(ecdf, rho).latency_s == 4e-4


def test_drops_count_as_infinite_latency():
    ecdf = EcdfAccumulator([1e-4] * 98 + [math.inf] * 2)
    assert outage_latency(ecdf, 0.05).latency_s == 1e-4
    assert math.isinf(outage_latency(ecdf, 0.01).latency_s)
    assert not outage_latency(ecdf, 0.01).meets(1e-3)


def test_rho_outside_unit_interval_rejected():
    with pytest.raises(ValueError):
        outage_latency(EcdfAccumulator([1.0]), 0.0)
    with pytest.raises(ValueError):
        outage_latency(EcdfAccumulator([1.0]), 1.0)


def test_empty_ledger_has_no_outage_value():
    result = outage_latency([], 0.01)
    assert result.latency_s is None and result.n_samples == 0
    assert not result.meets(1.0)


def test_quantile_monotone_and_merge_order_free():
    rng = np.random.default_rng(12)
    a = EcdfAccumulator(rng.gamma(2.0, 1e-4, 5000))
    b = EcdfAccumulator(rng.gamma(3.0, 1e-4, 3000))
    probs = np.linspace(0, 1, 200)
    q = a.quantile(probs)
    assert np.all(np.diff(q) >= 0)
    assert np.array_equal(a.merge(b).values, b.merge(a).values)
    assert len(a.merge(b)) == 8000
    with pytest.raises(ValueError):
        a.quantile(1.5)
    with pytest.raises(ValueError):
        EcdfAccumulator().quantile(0.5)


def test_nan_samples_rejected():
    with pytest.raises(ValueError):
        EcdfAccumulator([1.0, math.nan])


def test_ecdf_frame_keeps_exact_tail():
    samples = np.arange(1, 5001, dtype=float)
    frame = EcdfAccumulator(samples).to_frame()
    assert list(frame.columns) == ['value', 'cum_prob']
    assert np.all(np.diff(frame['cum_prob']) >= 0)
    assert np.all(np.diff(frame['value']) >= 0)
    assert frame['value'].iloc[-1] == 5000.0
    assert frame['cum_prob'].iloc[-1] == 1.0
    # every one of the 100 largest samples is present
    assert set(samples[-100:]) <= set(frame['value'])


def test_cdf_of_sample():
    ecdf = EcdfAccumulator([1.0, 2.0, 2.0, 3.0])
    assert ecdf.cdf(2.0) == 0.75
    assert ecdf.cdf(0.5) == 0.0


# ── Ledgers ────────────────────────────────────────────────────────────────────

def test_prb_ecdf_is_step_when_every_packet_fits_once():
    records = [_decoded(i, 5e-4, prbs=4) for i in range(50)]
    ecdf = prb_ecdf(records)
    assert ecdf.count == 50
    assert ecdf.quantile(0.01) == ecdf.quantile(1.0) == 4


def test_record_lists_skip_in_flight_packets():
    pending = PacketRecord(id=9, ue=0, cell=0, size_bytes=50, t_arrival=0.0)
    dropped = PacketRecord(id=10, ue=0, cell=0, size_bytes=50, t_arrival=0.0, dropped=True)
    samples = latency_samples([_decoded(0, 5e-4), pending, dropped])
    assert samples.size == 2
    assert math.isinf(samples.max())


def test_in_flight_packets_censored_at_their_age():
    result = run_simulation(ScenarioConfig(num_cells=1, ues_per_cell=2, arrival_rate_lambda=20000.0,
                                           payload_B=1500, horizon_s=0.02, warmup_tti=0,
                                           target_packets=10 ** 6))
    pending = result.in_flight_mask & result.measured_mask
    assert pending.sum() > 0
    samples = latency_samples(result)
    assert samples.size == int(result.measured_mask.sum())
    ages = result.end_s - result.packets['t_arrival'][pending]
    assert np.array_equal(np.sort(result.latencies()[pending]), np.sort(ages))
    assert np.isnan(result.latencies(censored=False)[pending]).all()


def test_ledger_frame_and_result_agree():
    result = run_simulation(_RUN_CFG)
    frame = result.ledger_frame()
    measured = frame[frame['t_arrival'] >= result.warmup_s]
    pending = result.in_flight_mask & result.measured_mask
    ages = result.end_s - result.packets['t_arrival'][pending]
    from_frame = np.sort(np.concatenate([latency_samples(measured), ages]))
    from_result = np.sort(latency_samples(result))
    assert np.array_equal(from_frame, from_result)
    finished = latency_samples(measured)
    assert np.all(finished >= 11 * result.tti_s / 4 - 1e-12)


def test_latency_breakdown_components_add_up():
    result = run_simulation(_RUN_CFG)
    breakdown = latency_breakdown(result)
    assert set(breakdown) == {'prep', 'queue', 'tx', 'decode', 'harq', 'latency'}
    total = sum(breakdown[c]['mean_s'] for c in ('prep', 'queue', 'tx', 'decode', 'harq'))
    assert total == pytest.approx(breakdown['latency']['mean_s'], rel=1e-9)
    assert breakdown['tx']['p99_s'] == pytest.approx(result.tti_s)


# ── Throughput ─────────────────────────────────────────────────────────────────

def test_throughput_cost_examples():
    assert throughput_cost(2.03, 93) == pytest.approx(97.82, abs=0.01)
    assert throughput_cost(71.06, 93) == pytest.approx(23.59, abs=0.01)
    assert throughput_cost(93, 93) == 0.0


def test_throughput_cost_needs_positive_baseline():
    with pytest.raises(ValueError):
        throughput_cost(10.0, 0.0)


def test_negative_cost_is_reported_not_clamped():
    logger = SimLogger()
    assert throughput_cost(110.0, 100.0, logger) == pytest.approx(-10.0)
    assert logger.warnings_count == 1


def test_cost_decreases_with_urllc_throughput():
    costs = [throughput_cost(mu, 93.0) for mu in np.linspace(0, 93, 50)]
    assert np.all(np.diff(costs) < 0)


def test_mean_throughput_skips_warmup():
    result = run_simulation(_RUN_CFG)
    expected = result.decoded_bits[100:].sum() / (result.end_s - 100 * result.tti_s)
    assert mean_throughput(result) == pytest.approx(expected)
    pooled = mean_throughput([result, result])
    assert pooled == pytest.approx(expected)


# ── Summary ────────────────────────────────────────────────────────────────────

def test_summary_json_is_serializable():
    result = run_simulation(_RUN_CFG)
    summary = summarize(result, rhos=[0.2, 1e-5])
    payload = summary.to_json()
    json.dumps(payload)
    assert set(payload) >= {'mu_bps', 'outage_latency_s', 'outage_samples', 'drop_rate', 'realized_bler',
                            'n_packets', 'scenario_hash', 'seed'}
    assert payload['outage_latency_s'][repr(1e-5)] is None
    assert payload['outage_latency_s'][repr(0.2)] is not None
    assert payload['n_packets'] == payload['n_decoded'] + payload['n_dropped'] + payload['n_in_flight']
    fields = summary.report_fields()
    assert 'insufficient' in fields['Outage latency']['rho=1e-05']


def test_summary_pools_replications():
    results = [run_simulation(_RUN_CFG, replication=r) for r in range(2)]
    pooled = summarize(results)
    assert pooled.replications == 2
    assert pooled.n_packets == sum(len(r.measured_records()) for r in results)
    with pytest.raises(ValueError):
        summarize([])
