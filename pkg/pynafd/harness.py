"""Seeded Monte-Carlo experiments over one scenario axis.

An experiment runs every (axis value, seed, algorithm) job on a thread pool
and writes, into its output directory:

* ``summary.csv``: one row per job (final spectral efficiency, time, status);
* ``trace.csv``: one row per outer iteration of every job;
* ``designs.json``: final designs of the proposed algorithms as (re, im) pairs;
* ``manifest.json``: configuration echo, package version and seeds.

Rows are written in job order, whatever order the workers finish in.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import __version__
from .errors import ConfigError, InfeasibleError, SingularCovarianceError, SubproblemError
from .scenario import (ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign, generate_channels,
                       key_line, read_toml, sum_rate)
from .solvers import SOLVER_MAP, SolverOptions, get_solver
from .utils import db_to_linear, from_pairs, to_pairs

logger = logging.getLogger(__name__)

AXES = ('antennas', 'iri_error_db', 'backhaul')
ALGORITHMS = ('sdr-bcd', 'spca', 'tdd', 'cran-ccfd')
# Algorithms whose final designs are serialized.
PROPOSED = ('sdr-bcd', 'spca')
STATUSES = ('converged', 'max_iter', 'infeasible', 'failed')

SUMMARY_COLUMNS = ['seed', 'axis', 'algorithm', 'se_bps_hz', 'time_ms', 'status', 'rank1_gap']
TRACE_COLUMNS = SUMMARY_COLUMNS + ['stage', 'iteration', 'objective', 'residual']

FLOAT_FORMAT = '%.12g'

# Keys of the [experiment] table that set SolverOptions fields.
_OPTION_KEYS = ('outer_tol', 'max_outer', 'randomization_samples', 'rank1_gap_threshold', 'tdd_downlink_share',
                'debug')
_EXPERIMENT_KEYS = ('axis', 'values', 'seeds', 'algorithms', 'output', 'workers', 'timing') + _OPTION_KEYS


@dataclass(frozen=True)
class ExperimentSpec:
    """A sweep of one scenario parameter over seeded channel draws.

    Attributes:
        scenario: Base scenario; the swept field is overridden per value
        axis: ``antennas`` (M), ``iri_error_db`` (Δ in dB) or ``backhaul`` (C in bps/Hz)
        values: Strictly increasing axis values
        seeds: Channel seeds, at least one
        algorithms: Subset of ``sdr-bcd``, ``spca``, ``tdd``, ``cran-ccfd``
        output: Directory receiving the result files
        workers: Worker threads
        timing: Record wall times; when off every time column is 0
        options: Solver settings shared by every job
    """
    scenario: ScenarioConfig
    axis: str
    values: Tuple[float, ...]
    seeds: Tuple[int, ...]
    algorithms: Tuple[str, ...] = ('sdr-bcd', 'spca')
    output: Path = Path('results')
    workers: int = 1
    timing: bool = True
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        object.__setattr__(self, 'algorithms', tuple(self.algorithms))
        object.__setattr__(self, 'output', Path(self.output))
        if self.axis not in AXES:
            raise ConfigError(f'axis must be one of {list(AXES)}, got {self.axis!r}', key='axis')
        if not self.values:
            raise ConfigError('values must not be empty', key='values')
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError('values must be strictly increasing', key='values')
        if self.axis == 'antennas' and any(v < 1 or v != int(v) for v in self.values):
            raise ConfigError('antenna counts must be positive integers', key='values')
        if self.axis == 'backhaul' and any(v < 0 for v in self.values):
            raise ConfigError('backhaul caps must be nonnegative', key='values')
        if not self.seeds:
            raise ConfigError('at least one seed is required', key='seeds')
        if any(s < 0 for s in self.seeds):
            raise ConfigError('seeds must be nonnegative', key='seeds')
        unknown = [a for a in self.algorithms if a not in SOLVER_MAP]
        if not self.algorithms or unknown:
            raise ConfigError(f'algorithms must be a nonempty subset of {sorted(SOLVER_MAP)}', key='algorithms')
        if self.workers < 1:
            raise ConfigError('workers must be at least 1', key='workers')

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> 'ExperimentSpec':
        """Load an experiment file with ``[experiment]`` and ``[scenario]`` tables.

        ``seeds`` is a list of seeds or a count ``n`` meaning ``0 .. n-1``; a
        relative ``output`` is resolved against the file's directory.

        Raises:
            ConfigError: On unknown keys or invalid values, with the line number
            FileNotFoundError: If ``path`` does not exist
        """
        path = Path(path)
        data, text = read_toml(path)
        source = str(path)

        def error(message: str, key: Optional[str]) -> ConfigError:
            return ConfigError(message, line=key_line(text, key) if key else None, source=source, key=key)

        unknown_tables = set(data) - {'experiment', 'scenario'}
        if unknown_tables:
            raise error(f'unknown table {sorted(unknown_tables)[0]!r}', sorted(unknown_tables)[0])
        if 'experiment' not in data:
            raise error('missing [experiment] table', None)
        table = dict(data['experiment'])
        for key in table:
            if key not in _EXPERIMENT_KEYS:
                raise error(f'unknown key {key!r}', key)
        for key in ('axis', 'values'):
            if key not in table:
                raise error(f'missing key {key!r}', None)

        scenario = ScenarioConfig.from_mapping(data.get('scenario', {}), source_text=text, source=source)
        seeds = table.get('seeds', 1)
        if isinstance(seeds, int) and not isinstance(seeds, bool):
            seeds = range(seeds)
        output = Path(table.get('output', 'results'))
        if not output.is_absolute():
            output = path.parent / output
        try:
            options = SolverOptions(**{k: table[k] for k in _OPTION_KEYS if k in table})
            return cls(scenario=scenario, axis=table['axis'], values=table['values'], seeds=tuple(seeds),
                       algorithms=tuple(table.get('algorithms', ('sdr-bcd', 'spca'))), output=output,
                       workers=int(table.get('workers', 1)), timing=bool(table.get('timing', True)),
                       options=options)
        except ConfigError as e:
            raise error(e.args[0], e.key) from None
        except (TypeError, ValueError) as e:
            raise error(str(e), None) from None

    def scenario_at(self, value: float) -> ScenarioConfig:
        """The base scenario with the swept field set to ``value``."""
        if self.axis == 'antennas':
            return self.scenario.replace(n_antennas=int(value))
        if self.axis == 'iri_error_db':
            return self.scenario.replace(iri_ratio=float(db_to_linear(value)))
        return self.scenario.replace(backhaul=float(value))

    @property
    def jobs(self) -> List[Tuple[float, int, str]]:
        """(value, seed, algorithm) triples in output order."""
        return [(v, s, a) for v in self.values for s in self.seeds for a in self.algorithms]

    def replace(self, **changes) -> 'ExperimentSpec':
        return dataclasses.replace(self, **changes)


@dataclass
class JobResult:
    """Rows produced by one (value, seed, algorithm) job."""
    summary: Dict[str, Any]
    trace: List[Dict[str, Any]] = field(default_factory=list)
    design: Optional[Dict[str, Any]] = None


@dataclass
class ExperimentResult:
    summary: pd.DataFrame
    trace: pd.DataFrame
    output: Path

    @property
    def n_infeasible(self) -> int:
        return int((self.summary['status'] == 'infeasible').sum())


def serialize_design(tx: TransmitDesign, rx: ReceiveDesign) -> Dict[str, Any]:
    return {'w': to_pairs(tx.w), 'p': tx.p.tolist(), 'u': to_pairs(rx.u), 'serving': rx.serving.tolist()}


def deserialize_design(entry: Dict[str, Any], n_antennas: int, n_trau: int) -> Tuple[TransmitDesign, ReceiveDesign]:
    """Inverse of :func:`serialize_design`; empty arrays get their shapes back from the counts."""
    w = from_pairs(entry['w']).reshape(n_antennas * n_trau, -1)
    u = from_pairs(entry['u']).reshape(n_antennas, -1)
    return TransmitDesign(w, np.asarray(entry['p'], dtype=float)), ReceiveDesign(u, entry['serving'])


def run_job(spec: ExperimentSpec, value: float, seed: int, algorithm: str) -> JobResult:
    """Draw the channel of ``seed`` and solve it; solver failures become status rows."""
    config = spec.scenario_at(value)
    ch = generate_channels(config, seed)
    row = {'seed': seed, 'axis': value, 'algorithm': algorithm, 'se_bps_hz': math.nan, 'time_ms': 0.0,
           'status': 'failed', 'rank1_gap': math.nan}
    start = time.perf_counter()
    try:
        result = get_solver(algorithm, config, spec.options).solve(ch)
    except InfeasibleError as e:
        logger.warning(f'seed {seed}, {spec.axis}={value:g}, {algorithm}: {e}')
        row['status'] = 'infeasible'
        return JobResult(row)
    except (SubproblemError, SingularCovarianceError, np.linalg.LinAlgError) as e:
        logger.error(f'seed {seed}, {spec.axis}={value:g}, {algorithm} failed: {e}')
        return JobResult(row)
    elapsed = 1e3 * (time.perf_counter() - start)

    status = result.trace.status
    if not result.feasible:
        logger.error(f'seed {seed}, {spec.axis}={value:g}, {algorithm}: final design violates its constraints')
        status = 'failed'
    row.update(se_bps_hz=result.se, time_ms=elapsed if spec.timing else 0.0, status=status,
               rank1_gap=result.rank1_gap)
    trace = []
    for record in result.trace.records:
        trace.append({
            'seed': seed, 'axis': value, 'algorithm': algorithm, 'se_bps_hz': record.sum_rate,
            'time_ms': record.time_ms if spec.timing else 0.0, 'status': status, 'rank1_gap': record.rank1_gap,
            'stage': record.stage, 'iteration': record.iteration, 'objective': record.objective,
            'residual': record.residual,
        })
    design = None
    if algorithm in PROPOSED:
        tx, rx = result.designs['design']
        design = {'seed': seed, 'axis': value, 'algorithm': algorithm, **serialize_design(tx, rx)}
    return JobResult(row, trace, design)


def manifest(spec: ExperimentSpec) -> Dict[str, Any]:
    return {
        'version': __version__,
        'axis': spec.axis,
        'values': list(spec.values),
        'seeds': list(spec.seeds),
        'algorithms': list(spec.algorithms),
        'timing': spec.timing,
        'scenario': spec.scenario.to_dict(),
        'options': dataclasses.asdict(spec.options),
    }


def run_experiment(spec: ExperimentSpec, progress: bool = True) -> ExperimentResult:
    """Run every job of ``spec`` and write the result files.

    Args:
        spec: Experiment to run
        progress: Show a progress bar

    Returns:
        ExperimentResult: The summary and trace tables and the output directory
    """
    jobs = spec.jobs
    logger.info(f'running {len(jobs)} jobs ({len(spec.values)} values x {len(spec.seeds)} seeds x '
                f'{len(spec.algorithms)} algorithms) on {spec.workers} workers')
    with ThreadPoolExecutor(max_workers=spec.workers) as executor:
        results = list(tqdm(executor.map(lambda job: run_job(spec, *job), jobs), total=len(jobs),
                            desc='pynafd', disable=not progress))

    summary = pd.DataFrame([r.summary for r in results], columns=SUMMARY_COLUMNS)
    trace = pd.DataFrame([row for r in results for row in r.trace], columns=TRACE_COLUMNS)
    designs = [r.design for r in results if r.design is not None]

    output = spec.output
    output.mkdir(parents=True, exist_ok=True)
    summary.to_csv(output / 'summary.csv', index=False, float_format=FLOAT_FORMAT)
    trace.to_csv(output / 'trace.csv', index=False, float_format=FLOAT_FORMAT)
    (output / 'designs.json').write_text(json.dumps(designs, sort_keys=True) + '\n')
    (output / 'manifest.json').write_text(json.dumps(manifest(spec), sort_keys=True, indent=2) + '\n')
    logger.info(f'wrote {len(summary)} summary rows and {len(trace)} trace rows to {output}')
    return ExperimentResult(summary, trace, output)


def recompute_se(spec: ExperimentSpec, entry: Dict[str, Any]) -> float:
    """Exact sum-rate of a serialized design on its regenerated channel."""
    config = spec.scenario_at(entry['axis'])
    ch: ChannelRealization = generate_channels(config, entry['seed'])
    tx, rx = deserialize_design(entry, config.n_antennas, config.n_trau)
    return sum_rate(ch, tx, rx, config)


def plot_csv(path: Union[str, Path], out: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """Pivot a trace CSV into mean objective and mean SE per (stage, iteration) and algorithm.

    Columns are named ``objective:<algorithm>`` and ``se_bps_hz:<algorithm>``.
    """
    trace = pd.read_csv(path)
    missing = [c for c in ('algorithm', 'stage', 'iteration', 'objective', 'se_bps_hz') if c not in trace.columns]
    if missing:
        raise ConfigError(f'not a trace file, missing columns {missing}', source=str(path))
    table = trace.pivot_table(index=['stage', 'iteration'], columns='algorithm',
                              values=['objective', 'se_bps_hz'], aggfunc='mean')
    table.columns = [f'{value}:{algorithm}' for value, algorithm in table.columns]
    table = table.reset_index()
    if out is not None:
        table.to_csv(out, index=False, float_format=FLOAT_FORMAT)
    return table


def sweep_spec(axis: str, values: Sequence[float], scenario: ScenarioConfig, seeds: Sequence[int],
               algorithms: Sequence[str], output: Union[str, Path], workers: int = 1,
               timing: bool = True) -> ExperimentSpec:
    """Spec for an ad-hoc sweep built from command-line arguments."""
    return ExperimentSpec(scenario=scenario, axis=axis, values=tuple(values), seeds=tuple(seeds),
                          algorithms=tuple(algorithms), output=Path(output), workers=workers, timing=timing)
