import logging
import unittest

import numpy as np

from pynafd.scenario import ScenarioConfig, generate_channels
from pynafd.solvers import SOLVER_MAP, IterationRecord, SolveTrace, get_solver
from pynafd.solvers.baselines import (BaselineResult, CcfdBaseline, TddBaseline, ccfd_scenario, merge_traces,
                                      solve_cran_ccfd, solve_tdd, tdd_phases)
from utils import random_channel, tiny_config, tiny_options

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


def make_trace(stages, status='converged'):
    trace = SolveTrace('spca', status=status)
    for i, stage in enumerate(stages):
        trace.records.append(IterationRecord(stage=stage, iteration=i, objective=float(i), sum_rate=float(i),
                                             residual=0.0, time_ms=1.0))
    trace.wall_time_ms = 10.0
    return trace


class TestTdd(unittest.TestCase):
    def test_phases(self):
        config = ScenarioConfig.desk().replace(du_rate_min=0.3, uu_rate_min=0.2)
        downlink, uplink = tdd_phases(config, 0.75)
        self.assertEqual((downlink.n_du, downlink.n_uu), (config.n_du, 0))
        self.assertEqual((uplink.n_du, uplink.n_uu), (0, config.n_uu))
        self.assertTrue(np.allclose(downlink.du_rate_min, 0.4))
        self.assertTrue(np.allclose(uplink.uu_rate_min, 0.8))
        self.assertEqual(uplink.n_trau, config.n_trau)

    def test_merge_traces(self):
        merged = merge_traces('tdd', [make_trace([1, 1, 2]), make_trace([1, 2, 2], status='max_iter')])
        self.assertEqual([r.stage for r in merged.records], [1, 1, 2, 3, 4, 4])
        self.assertEqual([r.iteration for r in merged.records], list(range(6)))
        self.assertEqual(merged.status, 'max_iter')
        self.assertEqual(merged.wall_time_ms, 20.0)
        self.assertEqual(merge_traces('tdd', [make_trace([1])]).status, 'converged')

    def test_se_ignores_iri(self):
        results = []
        for ratio in (0.01, 10.0):
            config = tiny_config(iri_ratio=ratio)
            results.append(solve_tdd(generate_channels(config, 2), config, tiny_options()))
        self.assertIsInstance(results[0], BaselineResult)
        self.assertTrue(all(r.feasible for r in results))
        self.assertAlmostEqual(results[0].se, results[1].se, places=6)
        result = results[0]
        self.assertAlmostEqual(result.se, float(result.du_rates.sum() + result.uu_rates.sum()))
        self.assertEqual(set(result.designs), {'downlink', 'uplink'})
        self.assertTrue(result.trace.is_monotone(tol=1e-5))
        self.assertGreaterEqual(max(r.stage for r in result.trace.records), 3)

    def test_no_backhaul_silences_downlink(self):
        config = tiny_config(backhaul=0.0, du_rate_min=0.0)
        result = solve_tdd(generate_channels(config, 4), config, tiny_options())
        self.assertTrue(np.allclose(result.du_rates, 0.0))
        self.assertTrue(np.all(result.uu_rates > 0.0))
        self.assertTrue(result.feasible)


class TestCcfd(unittest.TestCase):
    def setUp(self) -> None:
        self.config = tiny_config(n_trau=3, n_rrau=2, trau_power=[1.0, 2.0, 3.0], backhaul=[10.0, 20.0, 30.0])
        self.ch = generate_channels(self.config, 5)

    def test_scenario(self):
        ch, config = ccfd_scenario(self.ch, self.config)
        self.assertEqual((config.n_trau, config.n_rrau), (5, 5))
        self.assertTrue(np.array_equal(ch.layout.trau_xy, ch.layout.rrau_xy))
        self.assertTrue(np.allclose(config.trau_power, [1.0, 2.0, 3.0, 2.0, 2.0]))
        self.assertTrue(np.allclose(config.backhaul, [10.0, 20.0, 30.0, 20.0, 20.0]))
        self.assertEqual(ch.h_d.shape, (5 * self.config.n_antennas, self.config.n_du))
        self.assertEqual(ch.h_u.shape, (self.config.n_antennas, self.config.n_uu, 5))

    def test_deterministic(self):
        first, _ = ccfd_scenario(self.ch, self.config)
        second, _ = ccfd_scenario(self.ch, self.config)
        self.assertTrue(np.array_equal(first.h_d, second.h_d))
        self.assertTrue(np.array_equal(first.serving, second.serving))

    def test_keeps_trau_channels(self):
        ch, _ = ccfd_scenario(self.ch, self.config)
        rows = self.config.n_antennas * self.config.n_trau
        self.assertTrue(np.array_equal(ch.h_d[:rows], self.ch.h_d))
        self.assertFalse(np.allclose(ch.h_d[rows:], 0.0))

    def test_solve(self):
        config = tiny_config(n_trau=2, n_rrau=1)
        result = solve_cran_ccfd(generate_channels(config, 6), config, tiny_options())
        self.assertIsInstance(result, BaselineResult)
        self.assertEqual(result.scheme, 'cran-ccfd')
        self.assertTrue(result.feasible)
        self.assertEqual((result.du_rates.shape, result.uu_rates.shape), ((config.n_du,), (config.n_uu,)))
        self.assertAlmostEqual(result.se, float(result.du_rates.sum() + result.uu_rates.sum()))
        self.assertEqual(result.trace.algorithm, 'cran-ccfd')
        self.assertTrue(result.trace.is_monotone(tol=1e-5))
        self.assertEqual(set(result.designs), {'ccfd'})

    def test_needs_layout(self):
        bare = random_channel(np.random.default_rng(0), self.config)
        with self.assertRaises(ValueError):
            ccfd_scenario(bare, self.config)


class TestSolverMap(unittest.TestCase):
    def test_registered(self):
        self.assertIs(SOLVER_MAP['tdd'], TddBaseline)
        self.assertIs(SOLVER_MAP['cran-ccfd'], CcfdBaseline)
        solver = get_solver('tdd', tiny_config(), tiny_options(tdd_downlink_share=0.25))
        self.assertEqual(solver.options.tdd_downlink_share, 0.25)
        with self.assertRaises(KeyError):
            get_solver('nope', tiny_config())


if __name__ == '__main__':
    unittest.main()
