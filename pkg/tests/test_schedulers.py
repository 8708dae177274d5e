"""Scheduling metrics and EWMA throughput state."""
import numpy as np
import pytest

from urllc_capacity_sim.config import ScenarioConfig
from urllc_capacity_sim.schedulers import ETScheduler, PFScheduler, SchedulerState, make_scheduler

_CFG = ScenarioConfig(num_cells=1, ues_per_cell=4)


def test_equal_average_ranks_by_rate():
    rng = np.random.default_rng(0)
    pf = PFScheduler()
    for _ in range(1000):
        rates = rng.uniform(1e3, 1e8, 6)
        avg = float(rng.uniform(1e3, 1e7))
        by_metric = np.argsort([-pf.metric(r, avg) for r in rates], kind='stable')
        assert np.array_equal(by_metric, np.argsort(-rates, kind='stable'))


def test_et_prefers_lowest_average_throughput():
    rng = np.random.default_rng(1)
    et = ETScheduler()
    for _ in range(1000):
        rates = rng.uniform(1e3, 1e8, 5)
        avgs = rng.uniform(1e3, 1e7, 5)
        scores = [et.metric(r, t) for r, t in zip(rates, avgs)]
        assert int(np.argmax(scores)) == int(np.argmin(avgs))


def test_pf_ratio_invariance():
    pf = PFScheduler()
    assert pf.metric(2e6, 4e5) == pytest.approx(pf.metric(4e6, 8e5))


def test_score_reads_state_and_rank_breaks_ties_by_index():
    state = SchedulerState.create(_CFG)
    state.avg_throughput[2] = 5e5
    assert make_scheduler('pf').score(2, 1e6, state) == pytest.approx(2.0)
    assert make_scheduler('et').score(2, 1e6, state) == pytest.approx(1 / 5e5)
    rates = {0: 1e6, 1: 4e6, 2: 1e6, 3: 4e6}
    assert make_scheduler('pf').rank([3, 2, 1, 0], rates.get, state) == [1, 3, 0, 2]
    assert make_scheduler('et').rank([0, 1, 2, 3], rates.get, state) == [0, 1, 3, 2]


def test_unknown_scheduler():
    assert isinstance(make_scheduler('et'), ETScheduler)
    with pytest.raises(ValueError):
        make_scheduler('round-robin')


def test_state_starts_at_floor_with_empty_queues():
    state = SchedulerState.create(_CFG)
    assert np.all(state.avg_throughput == 1000.0)
    assert len(state.new_data) == 4 and all(len(q) == 0 for q in state.new_data)
    assert state.retransmissions == [[]]


def test_ewma_converges_to_served_rate_and_decays_to_floor():
    state = SchedulerState.create(_CFG)
    tti_s = 1e-4
    served = np.array([1000.0, 0.0, 0.0, 0.0])   # 10 Mbps for UE 0
    for _ in range(3000):
        state.update(served, tti_s)
    assert state.avg_throughput[0] == pytest.approx(1e7, rel=1e-6)
    assert np.all(state.avg_throughput[1:] == 1000.0)
    for _ in range(3000):
        state.update(np.zeros(4), tti_s)
    assert state.avg_throughput[0] == pytest.approx(1000.0, rel=1e-3)
    assert np.all(state.avg_throughput > 0)
