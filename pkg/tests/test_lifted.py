import logging
import unittest

import numpy as np

from pynafd.scenario import ScenarioConfig, downlink_rates, generate_channels, mmse_receivers, uplink_rates, whiten
from pynafd.solvers.lifted import LiftedModel, SelectionMatrix, extract_rank1, lift
from utils import random_channel, random_design, tiny_config

logger = logging.getLogger(__name__)
logging.basicConfig(level=logging.INFO)


class TestLifted(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(9)
        self.config = tiny_config(du_noise=1.0, rrau_noise=1.0, iri_ratio=0.2)
        self.ch = random_channel(self.rng, self.config)
        self.tx = random_design(self.rng, self.config)
        self.rx = mmse_receivers(self.ch, self.tx, self.config)

    def test_rank_one_rates_match(self):
        model = LiftedModel(self.ch, self.rx, self.config)
        design = lift(self.tx)
        dl, ul = model.rates(design.q, design.p)
        self.assertTrue(np.allclose(dl, downlink_rates(self.ch, self.tx, self.config)))
        self.assertTrue(np.allclose(ul, uplink_rates(self.ch, self.tx, self.rx, self.config)))

    def test_link_powers(self):
        design = lift(self.tx)
        expected = self.tx.link_powers(self.config.n_antennas)
        self.assertTrue(np.allclose(design.link_powers(self.config.n_antennas, self.config.n_trau), expected))
        model = LiftedModel(self.ch, self.rx, self.config)
        self.assertTrue(np.allclose(model.link_powers(design.q), expected))

    def test_selection(self):
        selection = SelectionMatrix(1, 2, 3)
        self.assertEqual(selection.matrix.diagonal().tolist(), [0.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        q = np.diag(np.arange(6.0))
        self.assertEqual(selection.trace(q), 5.0)
        with self.assertRaises(ValueError):
            SelectionMatrix(3, 2, 3)

    def test_extract_rank_one(self):
        w = self.tx.w[:, 0]
        recovered, gap = extract_rank1(np.outer(w, w.conj()))
        self.assertAlmostEqual(gap, 0.0, places=10)
        self.assertAlmostEqual(abs(np.vdot(recovered, w)), np.vdot(w, w).real, places=8)
        zero, gap = extract_rank1(np.zeros((3, 3)))
        self.assertTrue(np.allclose(zero, 0.0))
        self.assertEqual(gap, 0.0)

    def test_rank_two_gap(self):
        a, b = self.tx.w[:, 0], self.tx.w[:, 1]
        q = np.outer(a, a.conj()) + 0.5 * np.outer(b, b.conj())
        values = np.linalg.eigvalsh(q)
        _, gap = extract_rank1(q)
        self.assertAlmostEqual(gap, values[-2] / values[-1], places=10)

    def test_whitened_desk(self):
        config = ScenarioConfig.desk()
        ch, wconfig = whiten(generate_channels(config, 4), config)
        tx = random_design(self.rng, config)
        rx = mmse_receivers(ch, tx, wconfig)
        design = lift(tx)
        model = LiftedModel(ch, rx, wconfig)
        expected = np.sum(downlink_rates(ch, tx, wconfig)) + np.sum(uplink_rates(ch, tx, rx, wconfig))
        self.assertAlmostEqual(model.sum_rate(design.q, design.p), float(expected), places=8)


if __name__ == '__main__':
    unittest.main()
