"""Network description, channel draws, rate formulas and exact constraint checks.

A NAFD network has ``L`` transmitting RAUs (T-RAUs), ``Z`` receiving RAUs
(R-RAUs), ``K`` downlink users (DUs) and ``J`` uplink users (UUs); every RAU has
``M`` antennas. Downlink beamformers are stacked per T-RAU, so rows
``l*M:(l+1)*M`` of ``TransmitDesign.w`` hold the block ``w_{l,k}``.

Everything here works in natural units: powers in watts, rates in bps/Hz.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .errors import ConfigError, SingularCovarianceError
from .utils import block_slice, db_to_linear, dbm_to_watts, frozen

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Config fields that hold one value per node, with the count field they follow.
_VECTOR_FIELDS = {
    'trau_power': 'n_trau',
    'backhaul': 'n_trau',
    'uu_power': 'n_uu',
    'uu_rate_min': 'n_uu',
    'du_rate_min': 'n_du',
    'du_noise': 'n_du',
    'rrau_noise': 'n_rrau',
}

# File keys carrying a unit suffix, mapped to the fields they set.
_UNIT_KEYS = {
    'trau_power_dbm': ('trau_power',),
    'uu_power_dbm': ('uu_power',),
    'noise_dbm': ('du_noise', 'rrau_noise'),
    'du_noise_dbm': ('du_noise',),
    'rrau_noise_dbm': ('rrau_noise',),
    'iri_error_db': ('iri_ratio',),
}


def read_toml(path: Union[str, Path]) -> Tuple[Dict[str, Any], str]:
    """Load a TOML file, returning the parsed table and the raw text.

    Raises:
        FileNotFoundError: If ``path`` does not exist
        ConfigError: If the file is not valid TOML (with the failing line)
    """
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as e:
        line = getattr(e, 'lineno', None)
        if line is None:
            match = re.search(r'line (\d+)', str(e))
            line = int(match.group(1)) if match else None
        raise ConfigError(f'malformed TOML: {e}', line=line, source=str(path)) from e


def key_line(text: Optional[str], key: str) -> Optional[int]:
    """1-based line on which ``key = ...`` is assigned in ``text``."""
    if not text:
        return None
    match = re.search(rf'^[ \t]*{re.escape(key)}[ \t]*=', text, flags=re.MULTILINE)
    if match is None:
        return None
    return text.count('\n', 0, match.start()) + 1


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Static description of a NAFD network.

    Per-node quantities accept a scalar (broadcast to every node) or one value
    per node and are stored as read-only float arrays. The class defaults are
    the desk-scale profile; :meth:`full` gives the full simulation profile.

    Attributes:
        n_trau: Number of T-RAUs ``L``
        n_rrau: Number of R-RAUs ``Z``
        n_du: Number of downlink users ``K``
        n_uu: Number of uplink users ``J``
        n_antennas: Antennas per RAU ``M``
        radius: Radius of the placement disc in meters
        trau_power: Per-T-RAU power cap in W, length ``L``
        uu_power: Per-UU power cap in W, length ``J``
        backhaul: Per-T-RAU backhaul cap in bps/Hz, length ``L``
        du_rate_min: Downlink QoS floors in bps/Hz, length ``K``
        uu_rate_min: Uplink QoS floors in bps/Hz, length ``J``
        du_noise: Downlink noise powers in W, length ``K``
        rrau_noise: R-RAU noise powers in W, length ``Z``
        iri_ratio: Residual inter-RAU interference ratio (linear)
        theta: Sharpness of the smoothed link indicator
        xi: User association threshold in [0, 1]
        uu_pairing: Serving R-RAU of each UU (0-based); ``None`` picks the
            R-RAU with the largest average channel gain at draw time
    """
    n_trau: int = 4
    n_rrau: int = 4
    n_du: int = 3
    n_uu: int = 3
    n_antennas: int = 2
    radius: float = 60.0
    trau_power: ArrayLike = 1.0
    uu_power: ArrayLike = 0.5
    backhaul: ArrayLike = 20.0
    du_rate_min: ArrayLike = 0.1
    uu_rate_min: ArrayLike = 0.1
    du_noise: ArrayLike = 1e-10
    rrau_noise: ArrayLike = 1e-10
    iri_ratio: float = float(10.0 ** -0.5)
    theta: float = 1e3
    xi: float = 0.5
    pathloss_offset_db: float = 128.1
    pathloss_slope: float = 37.6
    shadowing_std_db: float = 8.0
    min_distance: float = 5.0
    uu_pairing: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        for name in ('n_trau', 'n_rrau', 'n_du', 'n_uu', 'n_antennas'):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f'{name} must be an integer, got {value!r}', key=name)
            object.__setattr__(self, name, int(value))
        for name in ('n_trau', 'n_rrau', 'n_antennas'):
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be at least 1', key=name)
        for name in ('n_du', 'n_uu'):
            if getattr(self, name) < 0:
                raise ConfigError(f'{name} must be nonnegative', key=name)

        for name, count_field in _VECTOR_FIELDS.items():
            object.__setattr__(self, name, self._vector(name, getattr(self, name), getattr(self, count_field)))
        for name in ('radius', 'iri_ratio', 'theta', 'xi', 'pathloss_offset_db', 'pathloss_slope',
                     'shadowing_std_db', 'min_distance'):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f'{name} must be a number, got {value!r}', key=name) from None
            if not math.isfinite(value):
                raise ConfigError(f'{name} must be finite', key=name)
            object.__setattr__(self, name, value)

        if self.radius <= 0:
            raise ConfigError('radius must be positive', key='radius')
        if np.any(self.trau_power <= 0):
            raise ConfigError('every T-RAU power cap must be positive', key='trau_power')
        if np.any(self.uu_power <= 0):
            raise ConfigError('every UU power cap must be positive', key='uu_power')
        if np.any(self.backhaul < 0):
            raise ConfigError('backhaul caps must be nonnegative', key='backhaul')
        for name in ('du_rate_min', 'uu_rate_min', 'du_noise', 'rrau_noise'):
            if np.any(getattr(self, name) < 0):
                raise ConfigError(f'{name} must be nonnegative', key=name)
        if self.iri_ratio < 0:
            raise ConfigError('iri_ratio must be nonnegative', key='iri_ratio')
        if self.theta <= 0:
            raise ConfigError('theta must be positive', key='theta')
        if not 0.0 <= self.xi <= 1.0:
            raise ConfigError('xi must lie in [0, 1]', key='xi')
        if self.shadowing_std_db < 0 or self.min_distance < 0:
            raise ConfigError('shadowing_std_db and min_distance must be nonnegative')

        if self.uu_pairing is not None:
            pairing = tuple(int(z) for z in self.uu_pairing)
            if len(pairing) != self.n_uu:
                raise ConfigError(f'uu_pairing needs {self.n_uu} entries, got {len(pairing)}', key='uu_pairing')
            if any(z < 0 or z >= self.n_rrau for z in pairing):
                raise ConfigError(f'uu_pairing entries must lie in [0, {self.n_rrau})', key='uu_pairing')
            object.__setattr__(self, 'uu_pairing', pairing)

    @staticmethod
    def _vector(name: str, value: ArrayLike, length: int) -> np.ndarray:
        try:
            array = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f'{name} must be numeric', key=name) from None
        if array.ndim == 0:
            array = np.full(length, float(array))
        if array.shape != (length,):
            raise ConfigError(f'{name} needs {length} values, got shape {array.shape}', key=name)
        if not np.all(np.isfinite(array)):
            raise ConfigError(f'{name} must be finite', key=name)
        return frozen(array)

    @classmethod
    def desk(cls, **changes) -> 'ScenarioConfig':
        """Desk-scale profile: L=Z=4, K=J=3, M=2."""
        return cls(**changes)

    @classmethod
    def full(cls, **changes) -> 'ScenarioConfig':
        """Full simulation profile: L=Z=10, K=J=5, M=2."""
        values = dict(n_trau=10, n_rrau=10, n_du=5, n_uu=5, n_antennas=2)
        values.update(changes)
        return cls(**values)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], source_text: Optional[str] = None,
                     source: Optional[str] = None) -> 'ScenarioConfig':
        """Build a config from a ``[scenario]`` table.

        Keys are the field names, plus unit-suffixed aliases converted to
        linear values (``trau_power_dbm``, ``uu_power_dbm``, ``noise_dbm``,
        ``du_noise_dbm``, ``rrau_noise_dbm``, ``iri_error_db``). The optional
        ``profile`` key (``"desk"`` or ``"full"``) selects the base.

        Raises:
            ConfigError: On unknown keys or invalid values, with the line of
                the offending key when ``source_text`` is given
        """
        data = dict(data)
        origin: Dict[str, str] = {}
        fields = {f.name for f in dataclasses.fields(cls)}

        def error(message: str, key: Optional[str]) -> ConfigError:
            return ConfigError(message, line=key_line(source_text, key) if key else None, source=source, key=key)

        profile = data.pop('profile', 'desk')
        if profile not in ('desk', 'full'):
            raise error(f'unknown profile {profile!r}', 'profile')
        values: Dict[str, Any] = {}
        if profile == 'full':
            values.update(n_trau=10, n_rrau=10, n_du=5, n_uu=5, n_antennas=2)

        for key, value in data.items():
            if key in _UNIT_KEYS:
                try:
                    converted = db_to_linear(value) if key.endswith('_db') else dbm_to_watts(value)
                except (TypeError, ValueError):
                    raise error(f'{key} must be numeric', key) from None
                for name in _UNIT_KEYS[key]:
                    values[name] = float(converted) if converted.ndim == 0 else converted
                    origin[name] = key
            elif key in fields:
                values[key] = tuple(value) if key == 'uu_pairing' else value
                origin[key] = key
            else:
                raise error(f'unknown key {key!r}', key)

        try:
            return cls(**values)
        except ConfigError as e:
            key = origin.get(e.key, e.key) if e.key else None
            raise error(str(e), key) from None

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> 'ScenarioConfig':
        """Load a scenario file; the keys may sit at top level or in ``[scenario]``."""
        data, text = read_toml(path)
        table = data.get('scenario', data)
        return cls.from_mapping(table, source_text=text, source=str(path))

    def replace(self, **changes) -> 'ScenarioConfig':
        return dataclasses.replace(self, **changes)

    @property
    def iri_variance(self) -> np.ndarray:
        """Residual IRI variance per (T-RAU, R-RAU) pair, ``Δ·σ²_U,z``."""
        return np.outer(np.ones(self.n_trau), self.iri_ratio * self.rrau_noise)

    def to_dict(self) -> Dict[str, Any]:
        result = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif isinstance(value, tuple):
                value = list(value)
            result[f.name] = value
        return result

    def summary(self) -> str:
        return (f'L={self.n_trau} Z={self.n_rrau} K={self.n_du} J={self.n_uu} M={self.n_antennas} '
                f'radius={self.radius:g} m, RAU power={self.trau_power.max():g} W, '
                f'UU power={self.uu_power.max(initial=0.0):g} W, backhaul={self.backhaul.min():g} bps/Hz, '
                f'iri_ratio={self.iri_ratio:g}')


@dataclass(frozen=True, eq=False)
class Layout:
    """Node positions in meters, one row ``(x, y)`` per node."""
    trau_xy: np.ndarray
    rrau_xy: np.ndarray
    du_xy: np.ndarray
    uu_xy: np.ndarray


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of all channels of a scenario.

    Attributes:
        h_d: T-RAU to DU channels, shape (M*L, K)
        h_u: UU to R-RAU channels, shape (M, J, Z)
        h_iui: UU to DU channels, shape (J, K)
        iri_var: Residual IRI variance per (T-RAU, R-RAU), shape (L, Z)
        serving: Serving R-RAU of every UU, shape (J,)
        layout: Node positions the draw was made from, if known
        seed: Seed of the draw, if known
    """
    h_d: np.ndarray
    h_u: np.ndarray
    h_iui: np.ndarray
    iri_var: np.ndarray
    serving: np.ndarray
    layout: Optional[Layout] = None
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'h_d', frozen(self.h_d, complex))
        object.__setattr__(self, 'h_u', frozen(self.h_u, complex))
        object.__setattr__(self, 'h_iui', frozen(self.h_iui, complex))
        object.__setattr__(self, 'iri_var', frozen(self.iri_var, float))
        object.__setattr__(self, 'serving', frozen(self.serving, int))
        for name in ('h_d', 'h_u', 'h_iui', 'iri_var'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f'{name} has non-finite entries')
        if np.any(self.iri_var < 0):
            raise ValueError('iri_var entries must be nonnegative')
        if self.h_u.ndim != 3 or self.h_d.ndim != 2:
            raise ValueError('h_d must be 2-D and h_u 3-D')
        m, j, z = self.h_u.shape
        l = self.iri_var.shape[0]
        if self.h_d.shape[0] != m * l or self.iri_var.shape != (l, z):
            raise ValueError('h_d, h_u and iri_var shapes disagree')
        if self.h_iui.shape != (j, self.h_d.shape[1]) or self.serving.shape != (j,):
            raise ValueError('h_iui or serving has the wrong shape')

    @property
    def n_antennas(self) -> int:
        return self.h_u.shape[0]

    @property
    def n_trau(self) -> int:
        return self.iri_var.shape[0]

    @property
    def n_rrau(self) -> int:
        return self.iri_var.shape[1]

    @property
    def n_du(self) -> int:
        return self.h_d.shape[1]

    @property
    def n_uu(self) -> int:
        return self.h_u.shape[1]

    def serving_channel(self, j: int) -> np.ndarray:
        """Channel of UU ``j`` at its serving R-RAU, length M."""
        return self.h_u[:, j, self.serving[j]]

    def whitened(self, config: 'ScenarioConfig') -> 'ChannelRealization':
        """This realization rescaled to unit noise power; see :func:`whiten`."""
        return whiten(self, config)[0]

    def subset(self, du: Sequence[int] = None, uu: Sequence[int] = None) -> 'ChannelRealization':
        """Keep only the listed DUs and UUs (all by default)."""
        du = np.arange(self.n_du) if du is None else np.asarray(du, dtype=int)
        uu = np.arange(self.n_uu) if uu is None else np.asarray(uu, dtype=int)
        return ChannelRealization(
            h_d=self.h_d[:, du], h_u=self.h_u[:, uu, :], h_iui=self.h_iui[np.ix_(uu, du)],
            iri_var=self.iri_var, serving=self.serving[uu], layout=self.layout, seed=self.seed)


@dataclass(frozen=True, eq=False)
class TransmitDesign:
    """Downlink beamformers ``w`` (M*L x K) and uplink powers ``p`` (J)."""
    w: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'w', np.array(self.w, dtype=complex, ndmin=2))
        object.__setattr__(self, 'p', np.array(self.p, dtype=float, ndmin=1))

    @classmethod
    def zeros(cls, config: ScenarioConfig) -> 'TransmitDesign':
        return cls(np.zeros((config.n_antennas * config.n_trau, config.n_du), dtype=complex),
                   np.zeros(config.n_uu))

    def link_powers(self, n_antennas: int) -> np.ndarray:
        """``||w_{l,k}||²`` for every (T-RAU, DU) pair, shape (L, K)."""
        return link_powers(self.w, n_antennas)

    def scaled(self, factor: float) -> 'TransmitDesign':
        """Scale every transmit power (downlink and uplink) by ``factor``."""
        return TransmitDesign(self.w * np.sqrt(factor), self.p * factor)

    def with_links(self, links: np.ndarray, n_antennas: int) -> 'TransmitDesign':
        """Zero the beamformer blocks of every (l, k) with ``links[l, k]`` false."""
        w = self.w.copy()
        for l, k in zip(*np.nonzero(~np.asarray(links, dtype=bool))):
            w[block_slice(int(l), n_antennas), k] = 0.0
        return TransmitDesign(w, self.p.copy())


@dataclass(frozen=True, eq=False)
class ReceiveDesign:
    """Uplink receive vectors: column ``j`` of ``u`` (M x J) is used at R-RAU ``serving[j]``."""
    u: np.ndarray
    serving: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'serving', np.asarray(self.serving, dtype=int).reshape(-1))

    def full(self, n_rrau: int) -> np.ndarray:
        """Receive tensor (M, J, Z) with zeros at every non-serving R-RAU."""
        m, j = self.u.shape
        tensor = np.zeros((m, j, n_rrau), dtype=complex)
        tensor[:, np.arange(j), self.serving] = self.u
        return tensor


@dataclass
class FeasibilityReport:
    """Signed residuals (lhs - rhs) of the exact constraints; positive means violated."""
    trau_power: np.ndarray
    uu_power: np.ndarray
    du_qos: np.ndarray
    uu_qos: np.ndarray
    backhaul: np.ndarray
    backhaul_usage: np.ndarray
    receive_pattern: float
    tolerance: float = 1e-6

    def residuals(self) -> Dict[str, np.ndarray]:
        return {
            'trau_power': self.trau_power,
            'uu_power': self.uu_power,
            'du_qos': self.du_qos,
            'uu_qos': self.uu_qos,
            'backhaul': self.backhaul,
            'receive_pattern': np.array([self.receive_pattern]),
        }

    @property
    def max_residual(self) -> float:
        values = [float(np.max(v)) for v in self.residuals().values() if np.size(v)]
        return max(values) if values else 0.0

    @property
    def feasible(self) -> bool:
        return self.max_residual <= self.tolerance

    def violations(self) -> List[str]:
        """Labels such as ``'du_qos[1]'`` of every constraint above tolerance."""
        labels = []
        for name, values in self.residuals().items():
            for index, value in enumerate(np.atleast_1d(values)):
                if value > self.tolerance:
                    labels.append(name if name == 'receive_pattern' else f'{name}[{index}]')
        return labels


def link_powers(w: np.ndarray, n_antennas: int) -> np.ndarray:
    """Per-block beamformer power, shape (L, K), for stacked ``w`` of shape (M*L, K)."""
    w = np.asarray(w)
    n_trau = w.shape[0] // n_antennas
    return np.sum(np.abs(w.reshape(n_trau, n_antennas, w.shape[1])) ** 2, axis=1)


def pathloss_db(distance_m, offset_db: float = 128.1, slope: float = 37.6):
    """Pathloss ``offset + slope·log10(d)`` with ``d`` in kilometers.

    Examples:
        >>> round(float(pathloss_db(60.0)), 1)
        82.2
    """
    return offset_db + slope * np.log10(np.asarray(distance_m, dtype=float) / 1000.0)


def rayleigh(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-power circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def smoothed_indicator(x, theta: float):
    """Continuous link indicator ``1 - exp(-θx)``.

    Args:
        x: Nonnegative scalar or array (a beamformer block power)
        theta: Sharpness, positive

    Returns:
        Value(s) in [0, 1), same shape as ``x``
    """
    if theta <= 0:
        raise ValueError('theta must be positive')
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError('x must be nonnegative')
    value = -np.expm1(-theta * x)
    return float(value) if value.ndim == 0 else value


def _uniform_disc(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=count))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def place_nodes(config: ScenarioConfig, rng: np.random.Generator, max_tries: int = 10000) -> Layout:
    """Place RAUs and users uniformly in the disc.

    Users are redrawn until they are at least ``config.min_distance`` meters
    from every RAU.
    """
    trau_xy = _uniform_disc(rng, config.n_trau, config.radius)
    rrau_xy = _uniform_disc(rng, config.n_rrau, config.radius)
    sites = np.vstack([trau_xy, rrau_xy])

    def users(count: int) -> np.ndarray:
        placed = np.zeros((count, 2))
        for index in range(count):
            for _ in range(max_tries):
                candidate = _uniform_disc(rng, 1, config.radius)
                if np.min(_distances(candidate, sites)) >= config.min_distance:
                    placed[index] = candidate[0]
                    break
            else:
                raise RuntimeError(f'could not place a user {config.min_distance} m away from every RAU')
        return placed

    return Layout(trau_xy=trau_xy, rrau_xy=rrau_xy, du_xy=users(config.n_du), uu_xy=users(config.n_uu))


def _large_scale_gain(distance_m: np.ndarray, config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    distance_m = np.maximum(distance_m, max(config.min_distance, 1e-3))
    loss_db = pathloss_db(distance_m, config.pathloss_offset_db, config.pathloss_slope)
    shadowing_db = rng.normal(0.0, config.shadowing_std_db, size=distance_m.shape)
    return 10.0 ** (-(loss_db + shadowing_db) / 10.0)


def draw_channels(config: ScenarioConfig, layout: Layout, rng: np.random.Generator,
                  seed: Optional[int] = None) -> ChannelRealization:
    """Draw all channels for a fixed layout.

    Each scalar channel is ``sqrt(pathloss·shadowing)`` times a unit-power
    Rayleigh coefficient; shadowing is shared by the antennas of one RAU.
    """
    L, Z, K, J, M = config.n_trau, config.n_rrau, config.n_du, config.n_uu, config.n_antennas

    gain_d = _large_scale_gain(_distances(layout.trau_xy, layout.du_xy), config, rng)
    h_d = (np.sqrt(gain_d)[:, None, :] * rayleigh(rng, (L, M, K))).reshape(L * M, K)

    gain_u = _large_scale_gain(_distances(layout.rrau_xy, layout.uu_xy), config, rng)
    h_u = rayleigh(rng, (M, J, Z)) * np.sqrt(gain_u.T)[None, :, :]

    gain_iui = _large_scale_gain(_distances(layout.uu_xy, layout.du_xy), config, rng)
    h_iui = np.sqrt(gain_iui) * rayleigh(rng, (J, K))

    if config.uu_pairing is not None:
        serving = np.asarray(config.uu_pairing, dtype=int)
    else:
        serving = np.argmax(gain_u, axis=0) if J else np.zeros(0, dtype=int)
    logger.debug(f'drew channels L={L} Z={Z} K={K} J={J} M={M}, serving={serving.tolist()}')
    return ChannelRealization(h_d=h_d, h_u=h_u, h_iui=h_iui, iri_var=config.iri_variance,
                              serving=serving, layout=layout, seed=seed)


def generate_channels(config: ScenarioConfig, seed: int) -> ChannelRealization:
    """Draw a layout and its channels; a pure function of ``(config, seed)``."""
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) < 2 ** 64:
        raise ValueError(f'seed must be a 64-bit nonnegative integer, got {seed!r}')
    if config.radius <= 0:
        raise ValueError('radius must be positive')
    rng = np.random.default_rng(int(seed))
    layout = place_nodes(config, rng)
    return draw_channels(config, layout, rng, seed=int(seed))


def whiten(ch: ChannelRealization, config: ScenarioConfig) -> Tuple[ChannelRealization, ScenarioConfig]:
    """Rescale every receiver to unit noise power.

    Rates, designs and constraints are unchanged by this transformation; it
    only brings the numbers handed to the convex solver near unity. A
    scenario with a zero noise power is returned unchanged.
    """
    if np.any(config.du_noise <= 0) or np.any(config.rrau_noise <= 0):
        return ch, config
    du_std = np.sqrt(config.du_noise)
    rrau_std = np.sqrt(config.rrau_noise)
    whitened = ChannelRealization(
        h_d=ch.h_d / du_std[None, :],
        h_u=ch.h_u / rrau_std[None, None, :],
        h_iui=ch.h_iui / du_std[None, :],
        iri_var=ch.iri_var / config.rrau_noise[None, :],
        serving=ch.serving, layout=ch.layout, seed=ch.seed)
    return whitened, config.replace(du_noise=1.0, rrau_noise=1.0)


def downlink_terms(ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-DU useful power and interference-plus-noise power."""
    gains = np.abs(ch.h_d.conj().T @ tx.w) ** 2
    signal = np.diag(gains).copy()
    interference = gains.sum(axis=1) - signal + config.du_noise
    if ch.n_uu:
        interference = interference + tx.p @ (np.abs(ch.h_iui) ** 2)
    return signal, interference


def uplink_terms(ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign, config: ScenarioConfig,
                 link_power: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-UU useful power and interference-plus-noise power after receive combining.

    ``link_power`` overrides the (L, K) block powers used for the residual IRI
    (the lifted solver passes ``Tr(Q_k T_l)``).
    """
    if link_power is None:
        link_power = tx.link_powers(config.n_antennas)
    iri = np.sum(link_power, axis=1) @ ch.iri_var
    signal = np.zeros(ch.n_uu)
    interference = np.zeros(ch.n_uu)
    for j in range(ch.n_uu):
        z = ch.serving[j]
        u = rx.u[:, j]
        gains = np.abs(u.conj() @ ch.h_u[:, :, z]) ** 2
        norm = float(np.real(u.conj() @ u))
        signal[j] = tx.p[j] * gains[j]
        interference[j] = tx.p @ gains - signal[j] + (config.rrau_noise[z] + iri[z]) * norm
    return signal, interference


def _rates(signal: np.ndarray, interference: np.ndarray) -> np.ndarray:
    sinr = np.divide(signal, interference, out=np.zeros_like(signal), where=interference > 0)
    return np.log2(1.0 + sinr)


def downlink_rates(ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig) -> np.ndarray:
    return _rates(*downlink_terms(ch, tx, config))


def uplink_rates(ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign, config: ScenarioConfig) -> np.ndarray:
    return _rates(*uplink_terms(ch, tx, rx, config))


def downlink_rate(k: int, ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig) -> float:
    """Rate of DU ``k`` in bps/Hz."""
    return float(downlink_rates(ch, tx, config)[k])


def uplink_rate(j: int, ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign,
                config: ScenarioConfig) -> float:
    """Rate of UU ``j`` in bps/Hz with receive vector ``rx.u[:, j]``."""
    return float(uplink_rates(ch, tx, rx, config)[j])


def sum_rate(ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign, config: ScenarioConfig) -> float:
    return float(np.sum(downlink_rates(ch, tx, config)) + np.sum(uplink_rates(ch, tx, rx, config)))


def check_feasibility(ch: ChannelRealization, tx: TransmitDesign, rx: ReceiveDesign, config: ScenarioConfig,
                      tolerance: float = 1e-6) -> FeasibilityReport:
    """Evaluate every exact constraint of the joint design problem.

    Backhaul usage counts a link as active whenever its block power is
    strictly positive.
    """
    link = tx.link_powers(config.n_antennas)
    du_rates = downlink_rates(ch, tx, config)
    uu_rates = uplink_rates(ch, tx, rx, config)
    usage = (link > 0).astype(float) @ du_rates if ch.n_du else np.zeros(config.n_trau)

    pattern = 0.0
    for j in range(ch.n_uu):
        if rx.serving[j] != ch.serving[j]:
            pattern = max(pattern, float(np.linalg.norm(rx.u[:, j])))

    return FeasibilityReport(
        trau_power=link.sum(axis=1) - config.trau_power,
        uu_power=np.maximum(tx.p - config.uu_power, -tx.p),
        du_qos=config.du_rate_min - du_rates,
        uu_qos=config.uu_rate_min - uu_rates,
        backhaul=usage - config.backhaul,
        backhaul_usage=usage,
        receive_pattern=pattern,
        tolerance=tolerance,
    )


def mmse_receiver(j: int, ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig,
                  link_power: Optional[np.ndarray] = None, scaled: bool = True) -> np.ndarray:
    """Closed-form MMSE receive vector of UU ``j`` at its serving R-RAU.

    Args:
        j: UU index
        ch: Channel realization
        tx: Transmit design (uplink powers and, through ``link_power``, the IRI)
        config: Scenario
        link_power: Optional (L, K) block powers replacing ``tx``'s
        scaled: Multiply by ``sqrt(P_U,j)``; without it the direction is
            returned even for a silent user

    Returns:
        Receive vector of length M

    Raises:
        SingularCovarianceError: If the covariance is singular (zero noise)
    """
    z = ch.serving[j]
    if link_power is None:
        link_power = tx.link_powers(config.n_antennas)
    iri = float(np.sum(link_power, axis=1) @ ch.iri_var[:, z])
    h = ch.h_u[:, :, z]
    covariance = (h * tx.p[None, :]) @ h.conj().T + (iri + config.rrau_noise[z]) * np.eye(ch.n_antennas)
    covariance = 0.5 * (covariance + covariance.conj().T)
    if iri + config.rrau_noise[z] <= 0 and np.linalg.matrix_rank(covariance) < ch.n_antennas:
        raise SingularCovarianceError(f'interference covariance of UU{j} at R-RAU {z} is singular')
    try:
        u = scipy.linalg.solve(covariance, h[:, j], assume_a='her')
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(str(e)) from e
    return u * np.sqrt(tx.p[j]) if scaled else u


def mmse_receivers(ch: ChannelRealization, tx: TransmitDesign, config: ScenarioConfig,
                   link_power: Optional[np.ndarray] = None, scaled: bool = True) -> ReceiveDesign:
    u = np.zeros((ch.n_antennas, ch.n_uu), dtype=complex)
    for j in range(ch.n_uu):
        u[:, j] = mmse_receiver(j, ch, tx, config, link_power=link_power, scaled=scaled)
    return ReceiveDesign(u, ch.serving.copy())


def matched_filter(ch: ChannelRealization) -> ReceiveDesign:
    u = np.zeros((ch.n_antennas, ch.n_uu), dtype=complex)
    for j in range(ch.n_uu):
        u[:, j] = ch.serving_channel(j)
    return ReceiveDesign(u, ch.serving.copy())


def downlink_rate_bounds(ch: ChannelRealization, config: ScenarioConfig) -> np.ndarray:
    """Interference-free single-user rate bound of every DU under the per-RAU caps."""
    norms = np.sqrt(link_powers(ch.h_d, config.n_antennas))
    gain = (np.sqrt(config.trau_power) @ norms) ** 2
    noise = np.where(config.du_noise > 0, config.du_noise, np.inf)
    return np.log2(1.0 + gain / noise) if ch.n_du else np.zeros(0)
