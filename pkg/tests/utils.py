import logging
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from pynafd.scenario import ChannelRealization, ReceiveDesign, ScenarioConfig, TransmitDesign
from pynafd.solvers import SolverOptions

logger = logging.getLogger(__name__)

# End-to-end sweeps are opt-in.
SLOW = os.environ.get('PYNAFD_SLOW_TESTS') == '1'
slow_test = unittest.skipUnless(SLOW, 'set PYNAFD_SLOW_TESTS=1 to run the end-to-end checks')


def tiny_config(**changes) -> ScenarioConfig:
    """Two of everything: small enough that every solver finishes in a few seconds."""
    values = dict(n_trau=2, n_rrau=2, n_du=2, n_uu=2, n_antennas=2, radius=40.0)
    values.update(changes)
    return ScenarioConfig(**values)


def tiny_options(**changes) -> SolverOptions:
    values = dict(max_outer=8, outer_tol=1e-3)
    values.update(changes)
    return SolverOptions(**values)


def scalar_network(iri: float = 0.1) -> ScenarioConfig:
    """One single-antenna node of each kind with unit noise."""
    return ScenarioConfig(n_trau=1, n_rrau=1, n_du=1, n_uu=1, n_antennas=1, du_noise=1.0, rrau_noise=1.0,
                          iri_ratio=iri)


def scalar_channel(iri: float = 0.1) -> ChannelRealization:
    return ChannelRealization(h_d=[[2.0]], h_u=[[[1.0]]], h_iui=[[0.5]], iri_var=[[iri]], serving=[0])


def random_channel(rng: np.random.Generator, config: ScenarioConfig, scale: float = 1.0) -> ChannelRealization:
    """Channel with unit-power Rayleigh entries and no layout."""
    M, L, Z, K, J = config.n_antennas, config.n_trau, config.n_rrau, config.n_du, config.n_uu

    def cn(*shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    return ChannelRealization(h_d=cn(M * L, K), h_u=cn(M, J, Z), h_iui=cn(J, K), iri_var=config.iri_variance,
                              serving=rng.integers(0, Z, size=J))


def random_design(rng: np.random.Generator, config: ScenarioConfig) -> TransmitDesign:
    """Random beamformers within the per-RAU caps and random uplink powers."""
    M, L, K = config.n_antennas, config.n_trau, config.n_du
    w = rng.standard_normal((M * L, K)) + 1j * rng.standard_normal((M * L, K))
    for l in range(L):
        rows = slice(l * M, (l + 1) * M)
        w[rows] *= np.sqrt(0.5 * config.trau_power[l] / np.sum(np.abs(w[rows]) ** 2))
    return TransmitDesign(w, rng.uniform(0.1, 1.0, size=config.n_uu) * config.uu_power)


def random_receivers(rng: np.random.Generator, ch: ChannelRealization) -> ReceiveDesign:
    u = rng.standard_normal((ch.n_antennas, ch.n_uu)) + 1j * rng.standard_normal((ch.n_antennas, ch.n_uu))
    return ReceiveDesign(u, ch.serving)


class TempDirTestCase(unittest.TestCase):
    """Test case with a scratch directory removed after each test."""

    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def write(self, name: str, text: str) -> Path:
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path
