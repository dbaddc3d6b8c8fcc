import logging
import math
import unittest

import cvxpy as cp
import numpy as np

from pynafd.errors import InfeasibleError
from pynafd.kernel import solve
from pynafd.scenario import (ReceiveDesign, TransmitDesign, downlink_rates, generate_channels, mmse_receivers,
                             sum_rate, uplink_rates)
from pynafd.solvers import AssociationMap, SolveContext
from pynafd.solvers.soc_tree import build_soc_tree
from pynafd.solvers.spca import (SpcaSolver, SpcaState, build_stage1_subproblem, build_stage2_subproblem,
                                 find_feasible_start)
from utils import random_channel, random_design, tiny_config, tiny_options

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


class TestSpcaState(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(31)
        self.config = tiny_config(du_noise=1.0, rrau_noise=1.0, iri_ratio=0.2)
        self.ch = random_channel(self.rng, self.config)
        self.tx = random_design(self.rng, self.config)
        self.rx = mmse_receivers(self.ch, self.tx, self.config)

    def test_factors_are_one_plus_sinr(self):
        state = SpcaState.from_design(self.tx, self.rx, self.ch, self.config)
        self.assertTrue(np.allclose(np.log2(state.chi_d), downlink_rates(self.ch, self.tx, self.config)))
        self.assertTrue(np.allclose(np.log2(state.chi_u), uplink_rates(self.ch, self.tx, self.rx, self.config)))
        self.assertTrue(np.all(state.active_d) and np.all(state.active_u))

    def test_gamma_bar(self):
        state = SpcaState.from_design(self.tx, self.rx, self.ch, self.config)
        for j in range(self.config.n_uu):
            h = self.ch.serving_channel(j)
            g = abs(np.vdot(self.rx.u[:, j], h)) ** 2 / (state.chi_u[j] - 1.0)
            self.assertAlmostEqual(state.gamma_bar(j, self.ch, self.config) / g, 1.0, places=8)

    def test_silent_user_is_inactive(self):
        w = self.tx.w.copy()
        w[:, 0] = 0.0
        state = SpcaState.from_design(TransmitDesign(w, self.tx.p), self.rx, self.ch, self.config)
        self.assertFalse(state.active_d[0])
        self.assertTrue(state.active_d[1])


class TestSpcaSubproblems(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.config = tiny_config(backhaul=3.0)
        cls.ctx = SolveContext.create(generate_channels(cls.config, 3), cls.config)
        cls.solver = SpcaSolver(cls.config, tiny_options())
        cls.state = cls.solver.initial_state(cls.ctx, cls.ctx.alive())

    def test_start_meets_qos(self):
        state = self.state
        rates = np.concatenate([np.log2(state.chi_d), np.log2(state.chi_u)])
        floors = np.concatenate([self.ctx.wconfig.du_rate_min, self.ctx.wconfig.uu_rate_min])
        self.assertTrue(np.all(rates >= floors - 1e-9))

    def test_programs_are_dcp(self):
        stage1 = build_stage1_subproblem(self.state, self.ctx.wch, self.ctx.wconfig)
        self.assertTrue(stage1.problem().is_dcp())
        tree = build_soc_tree(self.config.n_du, self.config.n_uu)
        chi = np.concatenate([self.state.chi_d, self.state.chi_u])
        self.assertAlmostEqual(stage1.start_value, tree.root_bound(chi))
        links = AssociationMap.all_links(self.config.n_trau, self.config.n_du)
        self.assertTrue(build_stage2_subproblem(self.state, links, self.ctx.wch, self.ctx.wconfig).problem().is_dcp())

    def test_tight_at_start(self):
        self.assertLess(self.solver.tightness(self.state, self.ctx, self.ctx.alive(), 1), 1e-8)

    def test_qos_user_without_signal(self):
        w = self.state.w.copy()
        w[:, 0] = 0.0
        tx = TransmitDesign(w, self.state.p)
        state = SpcaState.from_design(tx, self.state.receive(), self.ctx.wch, self.ctx.wconfig)
        with self.assertRaises(InfeasibleError) as cm:
            build_stage1_subproblem(state, self.ctx.wch, self.ctx.wconfig)
        self.assertIn('DU0', cm.exception.violating)

    def test_zero_floors_accept_quiet_start(self):
        config = self.ctx.wconfig.replace(du_rate_min=0.0, uu_rate_min=0.0)
        tx = TransmitDesign.zeros(config)
        rx = ReceiveDesign(np.ones((config.n_antennas, config.n_uu)), self.ctx.wch.serving)
        state = SpcaState.from_design(tx, rx, self.ctx.wch, config)
        self.assertTrue(np.allclose(state.chi_d, 1.0))
        self.assertTrue(build_stage1_subproblem(state, self.ctx.wch, config).problem().is_dcp())

    def test_find_feasible_start_exact(self):
        state = find_feasible_start(self.ctx.wch, self.ctx.wconfig, exact=True)
        rates = np.log2(state.chi_d)
        self.assertTrue(np.all(rates.sum() <= self.ctx.wconfig.backhaul + 1e-6))

    def test_stage1_solves(self):
        program = build_stage1_subproblem(self.state, self.ctx.wch, self.ctx.wconfig)
        report = solve(program, self.solver.options.kernel)
        self.assertTrue(report.usable, report.status)
        self.assertGreaterEqual(report.objective, program.start_value * (1.0 - 1e-5))

    def test_lost_user(self):
        links = np.ones((self.config.n_trau, self.config.n_du), dtype=bool)
        links[:, 1] = False
        with self.assertRaises(InfeasibleError) as cm:
            build_stage2_subproblem(self.state, AssociationMap(links), self.ctx.wch, self.ctx.wconfig)
        self.assertEqual(cm.exception.violating, ('DU1',))

    def test_stage2_multipliers(self):
        links = AssociationMap.all_links(self.config.n_trau, self.config.n_du)
        program = build_stage2_subproblem(self.state, links, self.ctx.wch, self.ctx.wconfig)
        report = solve(program, self.solver.options.kernel)
        self.assertTrue(report.usable, report.status)
        self.assertEqual(len(report.multipliers), len(program.constraints))
        self.assertLess(report.residuals['stationarity'], 1e-4)
        for constraint, multiplier in zip(program.constraints, report.multipliers):
            if isinstance(constraint, cp.constraints.Inequality) and multiplier is not None:
                multiplier = np.atleast_1d(multiplier)
                self.assertGreaterEqual(float(np.min(multiplier)), -1e-6 * max(1.0, float(np.max(np.abs(multiplier)))))


class TestSpcaUnlimitedBackhaul(unittest.TestCase):
    """With backhaul that can never bind, stage 2 over every link is the stage-1 program."""

    def test_stages_agree(self):
        config = tiny_config(backhaul=1e6)
        ctx = SolveContext.create(generate_channels(config, 3), config)
        solver = SpcaSolver(config, tiny_options())
        state = solver.initial_state(ctx, ctx.alive())
        links = AssociationMap.all_links(config.n_trau, config.n_du)
        first = solve(build_stage1_subproblem(state, ctx.wch, ctx.wconfig), solver.options.kernel)
        second = solve(build_stage2_subproblem(state, links, ctx.wch, ctx.wconfig), solver.options.kernel)
        self.assertTrue(first.usable and second.usable, (first.status, second.status))
        self.assertAlmostEqual(first.objective, second.objective, delta=1e-5 * max(1.0, abs(first.objective)))


class TestSpcaSolver(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.config = tiny_config()
        cls.ch = generate_channels(cls.config, 0)
        cls.outcome = SpcaSolver(cls.config, tiny_options()).solve(cls.ch)

    def test_feasible(self):
        self.assertTrue(self.outcome.feasible, self.outcome.feasibility.violations())
        self.assertAlmostEqual(self.outcome.se, sum_rate(self.ch, self.outcome.tx, self.outcome.rx, self.config))
        self.assertTrue(math.isnan(self.outcome.rank1_gap))

    def test_trace(self):
        trace = self.outcome.trace
        self.assertEqual(trace.algorithm, 'spca')
        self.assertTrue(trace.is_monotone(tol=1e-5))
        self.assertEqual({r.stage for r in trace.records}, {1, 2})
        self.assertTrue(all(r.sum_rate > 0 for r in trace.records))

    def test_sparse_links_respected(self):
        links = self.outcome.trace.association.links
        powers = self.outcome.tx.link_powers(self.config.n_antennas)
        self.assertTrue(np.all(powers[~links] == 0.0))


if __name__ == '__main__':
    unittest.main()
