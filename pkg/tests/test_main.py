"""Command-line surface: artifacts and exit codes."""
import json

import pytest

from urllc_capacity_sim.main import EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from urllc_capacity_sim.visualizer import read_table

_SMALL = ['--set', 'num_cells=1', '--set', 'ues_per_cell=2', '--set', 'warmup_tti=10', '--log-dir', '']
_RUN = _SMALL + ['--set', 'horizon_s=0.2', '--set', 'arrival_rate_lambda=200']


def test_run_writes_ledger_and_kpis(tmp_path):
    out = tmp_path / 'run'
    assert main(['run', '--out', str(out)] + _RUN) == EXIT_OK
    kpi = json.loads((out / 'kpi.json').read_text())
    assert {'mu_bps', 'outage_latency_s', 'drop_rate', 'realized_bler', 'n_packets'} <= set(kpi)
    assert kpi['seed'] == 1
    ledger = read_table(out / 'ledger.csv')
    assert len(ledger) > 0
    assert ledger['latency_s'].dropna().min() >= 392.857e-6 - 1e-12
    header = (out / 'ledger.csv').read_text().splitlines()[:3]
    assert header[0] == '# schema: ledger v1'
    assert header[1] == f"# scenario_hash: {kpi['scenario_hash']}"
    assert (out / 'tti.csv').exists() and (out / 'scenario.cfg').exists()


def test_same_seed_gives_byte_identical_ledgers(tmp_path):
    for name in ('a', 'b'):
        assert main(['run', '--seed', '7', '--out', str(tmp_path / name)] + _RUN) == EXIT_OK
    assert (tmp_path / 'a' / 'ledger.csv').read_bytes() == (tmp_path / 'b' / 'ledger.csv').read_bytes()
    assert main(['run', '--seed', '8', '--out', str(tmp_path / 'c')] + _RUN) == EXIT_OK
    assert (tmp_path / 'a' / 'ledger.csv').read_bytes() != (tmp_path / 'c' / 'ledger.csv').read_bytes()


def test_run_reports_insufficient_outage_as_null(tmp_path):
    argv = ['run', '--out', str(tmp_path), '--rho', '0.2,1e-5'] + _RUN + ['--set', 'arrival_rate_lambda=2000']
    assert main(argv) == EXIT_OK
    kpi = json.loads((tmp_path / 'kpi.json').read_text())
    assert kpi['outage_latency_s']['1e-05'] is None
    assert kpi['outage_latency_s']['0.2'] is not None


@pytest.mark.parametrize('argv', [
    [],
    ['simulate'],
    ['capacity', '--phi-ms', '1'],
    ['sweep', '--phi-ms', '1,x', '--rho', '0.01'],
])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_invalid_scenario_is_validation_error(tmp_path):
    assert main(['run', '--out', str(tmp_path), '--log-dir', '', '--set', 'num_cells=0']) == EXIT_VALIDATION
    assert main(['run', '--out', str(tmp_path), '--log-dir', '', '--set', 'num_antennas=4']) == EXIT_VALIDATION


def test_malformed_scenario_file(tmp_path):
    bad = tmp_path / 'bad.cfg'
    bad.write_text("num_cells = 4\nthis line has no separator\n")
    assert main(['run', '--scenario', str(bad), '--out', str(tmp_path), '--log-dir', '']) == EXIT_VALIDATION


def test_invalid_search_bounds(tmp_path):
    argv = ['capacity', '--phi-ms', '1', '--rho', '0.01', '--lambda-low', '100', '--lambda-high', '50',
            '--out', str(tmp_path)] + _SMALL
    assert main(argv) == EXIT_VALIDATION


def test_capacity_with_too_small_budget(tmp_path):
    argv = ['capacity', '--phi-ms', '1', '--rho', '1e-5', '--min-packets', '1000', '--out', str(tmp_path)] + _SMALL
    assert main(argv) == EXIT_ANALYSIS


def test_capacity_without_latency_bound(tmp_path, capsys):
    argv = ['capacity', '--phi-ms', 'inf', '--rho', '0.1', '--min-packets', '1000', '--lambda-low', '500',
            '--lambda-high', '1000', '--out', str(tmp_path)] + _SMALL
    assert main(argv) == EXIT_OK
    result = json.loads((tmp_path / 'capacity.json').read_text())
    assert result['lambda_star'] == 1000.0
    assert result['omega_star_bps'] == pytest.approx(2 * 50 * 8 * 1000.0)
    assert not any(p['stopped_early'] for p in result['probes'])
    assert 'Mbps' in capsys.readouterr().out


def test_capacity_below_floor_is_infeasible(tmp_path):
    argv = ['capacity', '--phi-ms', '0.2', '--rho', '0.1', '--min-packets', '1000', '--lambda-low', '500',
            '--lambda-high', '1000', '--out', str(tmp_path)] + _SMALL
    assert main(argv) == EXIT_ANALYSIS
    assert json.loads((tmp_path / 'capacity.json').read_text())['status'] == 'infeasible'


def test_baseline_writes_both_schedulers(tmp_path):
    argv = ['baseline', '--out', str(tmp_path), '--set', 'horizon_s=0.05'] + _SMALL
    assert main(argv) == EXIT_OK
    payload = json.loads((tmp_path / 'baseline.json').read_text())
    assert set(payload['mu_be_bps']) == {'pf', 'et'}
    assert all(mu > 0 for mu in payload['mu_be_bps'].values())


def test_plotdata_writes_ecdf_tables(tmp_path):
    argv = ['plotdata', '--payload', '50,1500', '--topology', '--render', '--out', str(tmp_path)] + _RUN
    assert main(argv) == EXIT_OK
    for name in ('ecdf_prb_B50.csv', 'ecdf_prb_B1500.csv', 'ecdf_latency_B50.csv', 'ecdf_latency_B1500.csv',
                 'cells.csv', 'ues.csv'):
        assert (tmp_path / name).exists(), name
    prbs = read_table(tmp_path / 'ecdf_prb_B50.csv')
    assert list(prbs.columns) == ['value', 'cum_prob']
    assert prbs['cum_prob'].iloc[-1] == 1.0
    assert (tmp_path / 'ecdf_prb.png').exists()
