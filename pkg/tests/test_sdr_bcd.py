import logging
import math
import unittest

import numpy as np

from pynafd.errors import InfeasibleError, SubproblemError
from pynafd.kernel import SolveReport, finite_diff_check, solve
from pynafd.scenario import ChannelRealization, generate_channels, mmse_receivers, sum_rate
from pynafd.solvers import AssociationMap, SolveContext, SpcaSolver
from pynafd.solvers.lifted import LiftedModel, lift
from pynafd.solvers.sdr_bcd import (SdrBcdSolver, build_stage1_subproblem, build_stage2_subproblem, eval_f, eval_h,
                                    linearize_h, run, tighten, weak_links)
from pynafd.solvers.surrogates import qol_bound
from utils import random_channel, random_design, tiny_config, tiny_options

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


def random_psd(rng, n, rank=2, scale=0.3):
    factor = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return scale * factor @ factor.conj().T / rank


class TestDcDecomposition(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(21)
        self.config = tiny_config(du_noise=1.0, rrau_noise=1.0, iri_ratio=0.3)
        self.ch = random_channel(self.rng, self.config)
        self.tx = random_design(self.rng, self.config)
        self.rx = mmse_receivers(self.ch, self.tx, self.config)
        self.model = LiftedModel(self.ch, self.rx, self.config)
        self.design = lift(self.tx)

    def test_difference_is_sum_rate(self):
        value = eval_f(self.design.q, self.design.p, self.model) - eval_h(self.design.q, self.design.p, self.model)
        self.assertAlmostEqual(value, sum_rate(self.ch, self.tx, self.rx, self.config), places=9)

    def test_majorant(self):
        majorant = linearize_h(self.design.q, self.design.p, self.model)
        self.assertAlmostEqual(majorant.value(self.design.q, self.design.p),
                               eval_h(self.design.q, self.design.p, self.model), places=10)
        N = self.config.n_antennas * self.config.n_trau
        for _ in range(1000):
            q = [random_psd(self.rng, N) for _ in range(self.config.n_du)]
            p = self.rng.uniform(0.0, 1.0, size=self.config.n_uu) * self.config.uu_power
            self.assertGreaterEqual(majorant.value(q, p), eval_h(q, p, self.model) - 1e-9)

    def test_gradients(self):
        majorant = linearize_h(self.design.q, self.design.p, self.model)
        q_n, p_n = self.design.q, self.design.p

        def h_of_p(p):
            return eval_h(q_n, p, self.model)

        def h_of_q0(q0):
            return eval_h([q0] + list(q_n[1:]), p_n, self.model)

        self.assertLess(finite_diff_check(h_of_p, majorant.grad_p, p_n), 1e-5)
        self.assertLess(finite_diff_check(h_of_q0, majorant.grad_q[0], q_n[0]), 1e-5)

    def test_tighten(self):
        tight = tighten(self.design.q, self.design.p, self.model, self.config.theta)
        dl, _ = self.model.rates(self.design.q, self.design.p)
        self.assertTrue(np.allclose(tight.rho, dl))
        dl_s, dl_i, _, _ = self.model.terms(self.design.q, self.design.p)
        self.assertTrue(np.allclose(tight.mu, 1.0))
        for k in range(self.config.n_du):
            bound = qol_bound(tight.mu[k], dl_s[k] / dl_i[k], tight.phi[k])
            self.assertAlmostEqual(bound, 2.0 ** tight.rho[k] - 1.0, places=8)
        self.assertEqual(tight.rho_hat.shape, (self.config.n_trau, self.config.n_du))


class TestSubproblems(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.config = tiny_config(backhaul=3.0)
        cls.ctx = SolveContext.create(generate_channels(cls.config, 3), cls.config)
        cls.solver = SdrBcdSolver(cls.config, tiny_options())
        cls.state = cls.solver.initial_state(cls.ctx, cls.ctx.alive())

    def test_stage1_program(self):
        program = build_stage1_subproblem(self.state, self.ctx.wch, self.ctx.wconfig)
        self.assertTrue(program.problem().is_dcp())
        self.assertAlmostEqual(program.start_value, self.solver.state_sum_rate(self.state, self.ctx))

    def test_stage2_program(self):
        links = AssociationMap.all_links(self.config.n_trau, self.config.n_du)
        program = build_stage2_subproblem(self.state, links, self.ctx.wch, self.ctx.wconfig)
        self.assertTrue(program.problem().is_dcp())

    def test_lost_user(self):
        links = np.ones((self.config.n_trau, self.config.n_du), dtype=bool)
        links[:, 1] = False
        with self.assertRaises(InfeasibleError) as cm:
            build_stage2_subproblem(self.state, AssociationMap(links), self.ctx.wch, self.ctx.wconfig)
        self.assertEqual(cm.exception.violating, ('DU1',))

    def test_tightness_at_start(self):
        self.assertLess(self.solver.tightness(self.state, self.ctx, self.ctx.alive(), 1), 1e-6)

    def test_stage1_solves(self):
        program = build_stage1_subproblem(self.state, self.ctx.wch, self.ctx.wconfig)
        report = solve(program, self.solver.options.kernel)
        self.assertTrue(report.usable, report.status)
        self.assertTrue(math.isfinite(report.objective))

    def test_stage2_solves(self):
        links = AssociationMap.all_links(self.config.n_trau, self.config.n_du)
        report = solve(build_stage2_subproblem(self.state, links, self.ctx.wch, self.ctx.wconfig),
                       self.solver.options.kernel)
        self.assertTrue(report.usable, report.status)

    def test_weak_links_keep_one_per_qos_user(self):
        config = self.ctx.wconfig.replace(du_rate_min=[0.5, 0.0])
        link = np.array([[1e-8, 1e-9], [1e-7, 1.0]])
        allowed = np.ones_like(link, dtype=bool)
        weak = weak_links(link, allowed, config)
        self.assertEqual(weak.tolist(), [[True, True], [False, False]])
        allowed[1, 0] = False
        self.assertEqual(weak_links(link, allowed, config)[:, 0].tolist(), [False, False])

    def test_recover_keeps_unconverged_point(self):
        alive = self.ctx.alive()
        values = {'q': list(self.state.design.q), 'p': self.state.design.p}
        report = SolveReport('max_iter', values=values, max_violation=0.0)
        recovered = self.solver._recover(self.state, report, self.ctx, alive, 2, 4)
        self.assertAlmostEqual(self.solver.state_sum_rate(recovered, self.ctx),
                               self.solver.state_sum_rate(self.state, self.ctx), places=9)

    def test_recover_rejects_bad_points(self):
        alive = self.ctx.alive()
        values = {'q': list(self.state.design.q), 'p': self.state.design.p}
        for report in (SolveReport('numerical'), SolveReport('max_iter', values=values, max_violation=1e-2),
                       SolveReport('max_iter', values=values)):
            with self.assertRaises(SubproblemError) as cm:
                self.solver._recover(self.state, report, self.ctx, alive, 2, 4)
            self.assertEqual((cm.exception.stage, cm.exception.iteration), (2, 4))
        silent = {'q': [0.0 * q for q in self.state.design.q], 'p': np.zeros(self.config.n_uu)}
        with self.assertRaises(SubproblemError):
            self.solver._recover(self.state, SolveReport('max_iter', values=silent, max_violation=0.0),
                                 self.ctx, alive, 2, 4)


class TestUnlimitedBackhaul(unittest.TestCase):
    """With backhaul that can never bind, the two stages solve the same program."""

    def test_stages_agree(self):
        config = tiny_config(backhaul=1e6)
        ctx = SolveContext.create(generate_channels(config, 3), config)
        solver = SdrBcdSolver(config, tiny_options())
        state = solver.initial_state(ctx, ctx.alive())
        links = AssociationMap.all_links(config.n_trau, config.n_du)
        first = solve(build_stage1_subproblem(state, ctx.wch, ctx.wconfig), solver.options.kernel)
        second = solve(build_stage2_subproblem(state, links, ctx.wch, ctx.wconfig), solver.options.kernel)
        self.assertTrue(first.usable and second.usable, (first.status, second.status))
        self.assertAlmostEqual(first.objective, second.objective, delta=1e-5 * max(1.0, abs(first.objective)))


class TestNoUsers(unittest.TestCase):
    def test_zero_se(self):
        config = tiny_config(n_du=0, n_uu=0, iri_ratio=0.0)
        M, L, Z = config.n_antennas, config.n_trau, config.n_rrau
        ch = ChannelRealization(h_d=np.zeros((M * L, 0)), h_u=np.zeros((M, 0, Z)), h_iui=np.zeros((0, 0)),
                                iri_var=config.iri_variance, serving=np.zeros(0, dtype=int))
        for solver_cls in (SdrBcdSolver, SpcaSolver):
            outcome = solver_cls(config, tiny_options()).solve(ch)
            self.assertEqual(outcome.se, 0.0)
            self.assertEqual(outcome.trace.n_iterations, 0)


class TestSdrBcdSolver(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.config = tiny_config()
        cls.ch = generate_channels(cls.config, 0)
        cls.outcome = SdrBcdSolver(cls.config, tiny_options()).solve(cls.ch)

    def test_feasible(self):
        self.assertTrue(self.outcome.feasible, self.outcome.feasibility.violations())
        self.assertAlmostEqual(self.outcome.se, sum_rate(self.ch, self.outcome.tx, self.outcome.rx, self.config))

    def test_trace(self):
        trace = self.outcome.trace
        self.assertEqual(trace.algorithm, 'sdr-bcd')
        self.assertTrue(trace.is_monotone(tol=1e-4))
        self.assertEqual([r.iteration for r in trace.records], list(range(trace.n_iterations)))
        self.assertEqual({r.stage for r in trace.records}, {1, 2})
        self.assertIn(trace.status, ('converged', 'max_iter'))

    def test_extras(self):
        self.assertIn('relaxed_se', self.outcome.extras)
        self.assertTrue(0.0 <= self.outcome.rank1_gap <= 1.0)
        self.assertFalse(math.isnan(self.outcome.extras['relaxed_se']))

    def test_run_tuple(self):
        tx, rx, trace = run(self.ch, self.config, tiny_options(max_outer=2))
        self.assertEqual(tx.w.shape, (4, 2))
        self.assertEqual(rx.u.shape, (2, 2))
        self.assertLessEqual(trace.n_iterations, 4)


if __name__ == '__main__':
    unittest.main()
