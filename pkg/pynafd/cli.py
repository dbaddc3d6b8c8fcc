"""Command-line front end.

Subcommands::

    pynafd run SPEC [--out DIR] [--seed N] [--algo A ...] [--workers N] [--no-timing]
    pynafd sweep --axis AXIS --values V ... [--scenario FILE | --full] [--seed N] [--seeds N] [--algo A ...]
    pynafd check [SCENARIO] [--full] [--seed N]
    pynafd trace --plot-csv TRACE [--out FILE]

Exit codes: 0 on success, 2 on a configuration error (including a missing
file), 3 when the QoS floors cannot be met.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, InfeasibleError
from .harness import ALGORITHMS, AXES, ExperimentSpec, plot_csv, run_experiment, sweep_spec
from .scenario import ScenarioConfig, check_feasibility, generate_channels, mmse_receivers, sum_rate
from .solvers import SolveContext
from .solvers.start import feasible_start, heuristic_design

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _scenario(path: Optional[str], full: bool) -> ScenarioConfig:
    if path:
        return ScenarioConfig.from_toml(path)
    return ScenarioConfig.full() if full else ScenarioConfig.desk()


def _print_summary(result) -> None:
    table = result.summary.groupby(['algorithm', 'axis'], sort=False)['se_bps_hz'].mean().reset_index()
    print(table.to_string(index=False, float_format=lambda v: f'{v:.4f}'))


def _finish(result) -> int:
    _print_summary(result)
    if result.n_infeasible:
        print(f'{result.n_infeasible} job(s) have unattainable QoS floors, see the log for the violating users',
              file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.from_toml(args.spec)
    changes = {}
    if args.out:
        changes['output'] = args.out
    if args.seed is not None:
        changes['seeds'] = (args.seed,)
    if args.algo:
        changes['algorithms'] = tuple(args.algo)
    if args.workers:
        changes['workers'] = args.workers
    if args.no_timing:
        changes['timing'] = False
    if changes:
        spec = spec.replace(**changes)
    result = run_experiment(spec, progress=not args.verbose)
    return _finish(result)


def cmd_sweep(args: argparse.Namespace) -> int:
    scenario = _scenario(args.scenario, args.full)
    seeds = range(args.seed, args.seed + args.seeds)
    spec = sweep_spec(args.axis, args.values, scenario, seeds, args.algo, args.out, workers=args.workers,
                      timing=not args.no_timing)
    return _finish(run_experiment(spec, progress=not args.verbose))


def cmd_check(args: argparse.Namespace) -> int:
    """Print the scenario and audit the heuristic starting point of one draw."""
    config = _scenario(args.scenario, args.full)
    print(config.summary())
    ch = generate_channels(config, args.seed)
    ctx = SolveContext.create(ch, config)
    links = ctx.alive().links
    tx = heuristic_design(ch, config, links)
    rx = mmse_receivers(ch, tx, config)
    report = check_feasibility(ch, tx, rx, config)
    print(f'seed {args.seed}: heuristic start sum-rate {sum_rate(ch, tx, rx, config):.4f} bps/Hz')
    for name, values in report.residuals().items():
        worst = float(np.max(values)) if np.size(values) else 0.0
        print(f'  {name:16s} max residual {worst: .3e}')
    # raises InfeasibleError when the floors cannot be met
    tx, rx = feasible_start(ctx.wch, ctx.wconfig, links)
    print(f'feasible start found, sum-rate {sum_rate(ctx.wch, tx, rx, ctx.wconfig):.4f} bps/Hz')
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    table = plot_csv(args.plot_csv, args.out)
    if args.out is None:
        print(table.to_csv(index=False, float_format='%.12g'), end='')
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pynafd', description='Joint sparse beamforming for NAFD networks')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='store_true', help='log every outer iteration')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='run an experiment file')
    run.add_argument('spec', help='TOML file with [experiment] and [scenario] tables')
    run.add_argument('--out', help='output directory (overrides the file)')
    run.add_argument('--seed', type=int, help='run this single seed')
    run.add_argument('--algo', nargs='+', choices=ALGORITHMS, help='algorithms to run')
    run.add_argument('--workers', type=int, help='worker threads')
    run.add_argument('--no-timing', action='store_true', help='write 0 in every time column')
    run.set_defaults(handler=cmd_run)

    sweep = commands.add_parser('sweep', help='sweep one scenario parameter')
    sweep.add_argument('--axis', required=True, choices=AXES)
    sweep.add_argument('--values', required=True, nargs='+', type=float)
    sweep.add_argument('--scenario', help='scenario TOML file (default: desk profile)')
    sweep.add_argument('--full', action='store_true', help='use the full simulation profile')
    sweep.add_argument('--seed', type=int, default=0, help='first seed')
    sweep.add_argument('--seeds', type=int, default=100, help='number of seeds')
    sweep.add_argument('--algo', nargs='+', choices=ALGORITHMS, default=['sdr-bcd', 'spca', 'tdd'])
    sweep.add_argument('--out', default='results', help='output directory')
    sweep.add_argument('--workers', type=int, default=1)
    sweep.add_argument('--no-timing', action='store_true')
    sweep.set_defaults(handler=cmd_sweep)

    check = commands.add_parser('check', help='audit a scenario')
    check.add_argument('scenario', nargs='?', help='scenario TOML file (default: desk profile)')
    check.add_argument('--full', action='store_true', help='use the full simulation profile')
    check.add_argument('--seed', type=int, default=0)
    check.set_defaults(handler=cmd_check)

    trace = commands.add_parser('trace', help='post-process a trace file')
    trace.add_argument('--plot-csv', required=True, metavar='TRACE', help='trace.csv to pivot')
    trace.add_argument('--out', help='write the pivot here instead of stdout')
    trace.set_defaults(handler=cmd_trace)
    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as e:
        print(f'infeasible: {e}', file=sys.stderr)
        return EXIT_INFEASIBLE


def main():
    sys.exit(cli())
