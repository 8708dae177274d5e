#!/usr/bin/env python3
"""
urllc-capacity-sim - downlink URLLC/best-effort system-level simulator and capacity search.
"""
import argparse
import math
import sys
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

from .analyzer import latency_ecdf, prb_ecdf, summarize
from .config import ScenarioParseError, ScenarioValidationError, load_scenario_file, offered_load, scenario_hash
from .core import run_simulation
from .harness import (CapacityQuery, InfeasibleQuery, InsufficientSamples, be_baseline, capacity_search,
                      default_search_bounds, grid_search, run_replications, run_sweep, sweep_cells)
from .logger import SimLogger
from .visualizer import PlotRenderer, ResultWriter

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_ANALYSIS = 3


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _list_of(kind):
    def parse(text: str):
        try:
            return [kind(item) for item in text.split(',') if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list: {text!r}")
    return parse


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = CliParser(add_help=False)
    common.add_argument("--scenario", help="Scenario file (key = value lines); defaults apply when omitted")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one scenario key (repeatable)")
    common.add_argument("--seed", type=int, help="Master seed (same as --set seed=N)")
    common.add_argument("--out", default="results", help="Output directory (default: results)")
    common.add_argument("--log-dir", default="logs", help="Log directory; empty disables the log file")
    common.add_argument("--verbose", action="store_true", help="Debug logging")
    common.add_argument("--render", action="store_true", help="Also render PNG plots")

    search = CliParser(add_help=False)
    search.add_argument("--lambda-low", type=float,
                        help="Lower bound on per-UE packets/s (default: upper bound / 100)")
    search.add_argument("--lambda-high", type=float,
                        help="Upper bound on per-UE packets/s (default: air-interface peak at the top MCS)")
    search.add_argument("--tolerance", type=float, default=0.05, help="Relative bracket width to stop at")
    search.add_argument("--min-packets", type=int, default=100000, help="Decoded packets per probe")

    parser = CliParser(description="Downlink URLLC capacity simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="One simulation: ledger, per-TTI usage and KPIs")
    run.add_argument("--replications", type=int, default=1, help="Independent replications (default: 1)")
    run.add_argument("--rho", type=_list_of(float), help="Outage probabilities to report")

    cap = sub.add_parser("capacity", parents=[common, search], help="Supported load for one latency/outage target")
    cap.add_argument("--phi-ms", type=float, required=True, help="Latency target in ms ('inf' for none)")
    cap.add_argument("--rho", type=float, required=True, help="Outage probability")
    cap.add_argument("--grid", type=int, default=0, help="Exhaustive lambda grid of N points instead of bisection")

    sweep = sub.add_parser("sweep", parents=[common, search], help="Supported load and cost over a target grid")
    sweep.add_argument("--phi-ms", type=_list_of(float), required=True)
    sweep.add_argument("--rho", type=_list_of(float), required=True)
    sweep.add_argument("--payload", type=_list_of(int), help="Payload sizes in bytes")
    sweep.add_argument("--scheduler", type=_list_of(str), help="Schedulers (pf, et)")

    base = sub.add_parser("baseline", parents=[common], help="Best-effort full-buffer throughput")
    base.add_argument("--scheduler", type=_list_of(str), default=['pf', 'et'])

    plot = sub.add_parser("plotdata", parents=[common], help="PRB-per-packet and latency ECDF tables")
    plot.add_argument("--payload", type=_list_of(int), help="Payload sizes in bytes")
    plot.add_argument("--topology", action="store_true", help="Also write cells.csv and ues.csv")

    return parser.parse_args(argv)


def _load_config(args: argparse.Namespace):
    overrides: List[str] = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_scenario_file(args.scenario, overrides)


def cmd_run(args, cfg, logger: SimLogger) -> int:
    if args.replications > 1:
        results = run_replications(cfg, args.replications)
        for result in results:
            logger.log_run(scenario_hash(cfg), {'replication': result.replication, 'packets': result.n_packets})
    else:
        results = [run_simulation(cfg, logger=logger)]
    summary = summarize(results, args.rho)

    writer = ResultWriter(args.out, logger)
    writer.write_scenario(cfg)
    for result in results:
        suffix = '' if result.replication == 0 else f"_r{result.replication}"
        writer.write_ledger(result, f"ledger{suffix}.csv")
        writer.write_tti(result, f"tti{suffix}.csv")
    writer.write_json('kpi.json', summary.to_json())

    print(f"Scenario {summary.scenario_hash} (seed {summary.seed}): throughput {summary.mu_bps / 1e6:.4f} Mbps")
    for rho, outage in summary.outage.items():
        value = 'n/a' if outage.latency_s is None else f"{outage.latency_s * 1e3:.4f} ms"
        marker = '' if outage.sufficient else ' [insufficient samples]'
        print(f"  outage latency @ rho={rho:g}: {value}{marker}")
    if args.render and cfg.traffic_mode == 'urllc_ftp3':
        frames = {f"rep {r.replication}": latency_ecdf(r).to_frame() for r in results}
        PlotRenderer(args.out, logger).render_ecdf(frames, 'latency_ccdf.png', 'Latency (ms)', 1e3, log_tail=True)
    logger.generate_report("Simulation Report", summary.report_fields())
    return EXIT_OK


def _bounds(args, cfg) -> Optional[Tuple[float, float]]:
    if args.lambda_low is None and args.lambda_high is None:
        return None
    low, high = default_search_bounds(cfg)
    return (args.lambda_low if args.lambda_low is not None else low,
            args.lambda_high if args.lambda_high is not None else high)


def _query(args, cfg, phi_ms: float, rho: float) -> CapacityQuery:
    phi_s = phi_ms * 1e-3 if math.isfinite(phi_ms) else math.inf
    low, high = _bounds(args, cfg) or default_search_bounds(cfg)
    return CapacityQuery(cfg, phi_s, rho, low, high, args.tolerance, args.min_packets)


def cmd_capacity(args, cfg, logger: SimLogger) -> int:
    query = _query(args, cfg, args.phi_ms, args.rho)
    writer = ResultWriter(args.out, logger)
    try:
        result = grid_search(query, args.grid, logger) if args.grid else capacity_search(query, logger)
    except InfeasibleQuery as e:
        print(f"Infeasible: {e}")
        writer.write_json('capacity.json', {'status': 'infeasible', 'omega_star_bps': None,
                                             'scenario_hash': scenario_hash(cfg), 'seed': cfg.seed,
                                             'detail': str(e)})
        raise
    writer.write_json('capacity.json', result.to_json())
    print(f"Omega* = {result.omega_star_mbps:.4f} Mbps (lambda* = {result.lambda_star:.2f} packets/s per UE, "
          f"{result.n_probes} probes, status {result.status})")
    logger.generate_report("Capacity Search Report", {
        'Scenario': scenario_hash(cfg), 'Seed': cfg.seed, 'Target': f"phi={args.phi_ms:g} ms, rho={args.rho:g}",
        'Supported load': f"{result.omega_star_mbps:.4f} Mbps", 'Status': result.status,
    })
    return EXIT_ANALYSIS if result.noisy else EXIT_OK


def cmd_sweep(args, cfg, logger: SimLogger) -> int:
    cells = sweep_cells(args.phi_ms, args.rho, args.payload or [cfg.payload_B], args.scheduler or [cfg.scheduler])
    sweep = run_sweep(cfg, cells, _bounds(args, cfg), args.tolerance, args.min_packets, logger)
    writer = ResultWriter(args.out, logger)
    writer.write_sweep(sweep, cfg)
    frame = sweep.to_frame()
    print(frame.to_string(index=False))
    if args.render:
        renderer = PlotRenderer(args.out, logger)
        renderer.render_capacity(frame)
        renderer.render_cost(frame)
    logger.generate_report("Sweep Report", {
        'Scenario': scenario_hash(cfg), 'Seed': cfg.seed, 'Cells': len(cells),
        'Baselines': {s: f"{mu / 1e6:.4f} Mbps" for s, mu in sweep.baselines.items()},
        'Runtime': f"{sweep.metadata['runtime_s']:.1f} s",
    })
    return EXIT_OK if all(r.status == 'ok' for r in sweep.rows) else EXIT_ANALYSIS


def cmd_baseline(args, cfg, logger: SimLogger) -> int:
    baselines = {s: be_baseline(cfg, s, logger=logger) for s in args.scheduler}
    ResultWriter(args.out, logger).write_json('baseline.json', {
        'mu_be_bps': baselines, 'scenario_hash': scenario_hash(cfg), 'seed': cfg.seed})
    for scheduler, mu in baselines.items():
        print(f"mu_BE({scheduler}) = {mu / 1e6:.4f} Mbps")
    logger.generate_report("Baseline Report", {
        'Scenario': scenario_hash(cfg), 'Seed': cfg.seed,
        'Throughput': {s: f"{mu / 1e6:.4f} Mbps" for s, mu in baselines.items()},
    })
    return EXIT_OK


def cmd_plotdata(args, cfg, logger: SimLogger) -> int:
    writer = ResultWriter(args.out, logger)
    prb_frames, latency_frames = {}, {}
    topology = None
    for payload in args.payload or [cfg.payload_B]:
        run_cfg = replace(cfg, payload_B=payload)
        result = run_simulation(run_cfg, logger=logger)
        topology = result.topology
        prbs, latency = prb_ecdf(result), latency_ecdf(result)
        writer.write_ecdf(prbs, f"prb_B{payload}", run_cfg)
        writer.write_ecdf(latency, f"latency_B{payload}", run_cfg)
        prb_frames[f"B={payload} bytes"] = prbs.to_frame()
        latency_frames[f"B={payload} bytes"] = latency.to_frame()
        if prbs.count:
            print(f"B={payload}: {prbs.count} packets, median PRBs {prbs.quantile(0.5):g}, "
                  f"95th percentile {prbs.quantile(0.95):g} "
                  f"(offered load {offered_load(run_cfg) / 1e6:.3f} Mbps)")
    if args.topology and topology is not None:
        writer.write_topology(topology)
    if args.render:
        renderer = PlotRenderer(args.out, logger)
        renderer.render_ecdf(prb_frames, 'ecdf_prb.png', 'Scheduled PRBs per packet')
        renderer.render_ecdf(latency_frames, 'ecdf_latency.png', 'Latency (ms)', 1e3)
        if args.topology and topology is not None:
            renderer.render_layout(topology)
    return EXIT_OK


COMMANDS = {
    'run': cmd_run,
    'capacity': cmd_capacity,
    'sweep': cmd_sweep,
    'baseline': cmd_baseline,
    'plotdata': cmd_plotdata,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    SimLogger.configure(args.log_dir or None, args.verbose)
    logger = SimLogger()
    try:
        cfg = _load_config(args)
        logger.log(f"Scenario {scenario_hash(cfg)}, seed {cfg.seed}")
        return COMMANDS[args.command](args, cfg, logger)
    except (ScenarioParseError, ScenarioValidationError) as e:
        logger.log_error(f"Invalid scenario: {e}")
        print(f"Invalid scenario: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InfeasibleQuery, InsufficientSamples) as e:
        logger.warning(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_ANALYSIS
    except ValueError as e:
        logger.log_error(f"Invalid arguments: {e}")
        print(f"Invalid arguments: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        logger.log_error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.log("Interrupted by user")
        return EXIT_USAGE
    except Exception as e:
        logger.logger.exception(f"Unexpected error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
