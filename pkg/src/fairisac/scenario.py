"""World model: system parameters, planar geometry, channels and link gains.

Node indexing convention used throughout the package: receive nodes are
numbered ``m = 0 .. K-1`` for the communication users and ``m = K`` for the
base station, so ``M = K + 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


class DimensionError(ScenarioError):
    pass


class GeometryError(ScenarioError):
    pass


class ChannelFileError(ScenarioError):
    """Malformed channel file; the message names the offending row/field."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SystemParams:
    """OFDM and radio parameters. Powers in W, frequencies in Hz."""

    n_tx: int
    n_sc: int
    n_sym: int
    f_c: float
    delta_f: float
    t_sym: float
    p_total: float
    noise_power: tuple
    bandwidth: Optional[float] = None

    def __post_init__(self):
        for name in ("n_tx", "n_sc", "n_sym"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise DimensionError(f"{name} must be an integer >= 1, got {val!r}")
            object.__setattr__(self, name, int(val))
        for name in ("f_c", "delta_f", "t_sym", "p_total"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be > 0, got {getattr(self, name)!r}")
        noise = tuple(float(x) for x in np.atleast_1d(self.noise_power))
        if not noise or any(not x > 0 for x in noise):
            raise ScenarioError("noise_power entries must be > 0")
        object.__setattr__(self, "noise_power", noise)
        bw = self.n_sc * self.delta_f
        if self.bandwidth is not None and not math.isclose(self.bandwidth, bw, rel_tol=1e-9):
            raise ScenarioError(
                f"bandwidth {self.bandwidth} != n_sc * delta_f = {bw}"
            )
        object.__setattr__(self, "bandwidth", bw)
        if self.t_sym * self.delta_f < 1.0 - 1e-12:
            raise ScenarioError("t_sym must be >= 1/delta_f")


@dataclass(frozen=True)
class Geometry:
    """Planar node layout. Target velocities are radial speeds in m/s."""

    bs_pos: np.ndarray
    user_pos: np.ndarray
    target_pos: np.ndarray
    target_vel: np.ndarray
    c0: float = 299_792_458.0

    def __post_init__(self):
        bs = np.asarray(self.bs_pos, dtype=float).reshape(2)
        users = np.asarray(self.user_pos, dtype=float).reshape(-1, 2)
        targets = np.asarray(self.target_pos, dtype=float).reshape(-1, 2)
        vel = np.asarray(self.target_vel, dtype=float).reshape(-1)
        if len(users) < 1 or len(targets) < 1:
            raise DimensionError("need at least one user and one target")
        if len(vel) != len(targets):
            raise DimensionError(
                f"{len(vel)} target velocities for {len(targets)} targets"
            )
        if not self.c0 > 0:
            raise ScenarioError("c0 must be > 0")
        object.__setattr__(self, "bs_pos", _readonly(bs))
        object.__setattr__(self, "user_pos", _readonly(users))
        object.__setattr__(self, "target_pos", _readonly(targets))
        object.__setattr__(self, "target_vel", _readonly(vel))
        d = self.target_node_distances()
        if np.any(self.bs_target_distances() <= 0) or np.any(d <= 0):
            raise GeometryError("a target coincides with the BS or a user")

    @property
    def n_users(self) -> int:
        return len(self.user_pos)

    @property
    def n_targets(self) -> int:
        return len(self.target_pos)

    @property
    def node_pos(self) -> np.ndarray:
        """Receive-node positions, users first and the BS last, shape (M, 2)."""
        return np.vstack([self.user_pos, self.bs_pos[None, :]])

    def bs_target_distances(self) -> np.ndarray:
        return np.linalg.norm(self.target_pos - self.bs_pos, axis=1)

    def target_node_distances(self) -> np.ndarray:
        """d[q, m] from target q to receive node m, shape (Q, M)."""
        diff = self.node_pos[None, :, :] - self.target_pos[:, None, :]
        return np.linalg.norm(diff, axis=2)


@dataclass(frozen=True)
class SensingLinkGains:
    a_bar: np.ndarray  # (Q, M) complex
    aod: np.ndarray  # (Q,)
    aoa: np.ndarray  # (Q, M)


@dataclass(frozen=True)
class ChannelSet:
    """Downlink channels ``h[k, i, :]``, shape (K, N_c, N_T)."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 3:
            raise DimensionError(f"channel array must be 3-D (K, N_c, N_T), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ScenarioError("channel entries must be finite")
        object.__setattr__(self, "h", _readonly(h))

    @property
    def shape(self) -> tuple:
        return self.h.shape

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return self.h.shape == other.h.shape and np.array_equal(self.h, other.h)

    __hash__ = None


@dataclass(frozen=True)
class Scenario:
    params: SystemParams
    geometry: Geometry
    gains: SensingLinkGains
    channels: ChannelSet
    seed: Union[int, str, None] = None

    def __post_init__(self):
        K, Q = self.n_users, self.n_targets
        if self.channels.shape != (K, self.params.n_sc, self.params.n_tx):
            raise DimensionError(
                f"channels have shape {self.channels.shape}, expected "
                f"{(K, self.params.n_sc, self.params.n_tx)}"
            )
        if self.gains.a_bar.shape != (Q, K + 1):
            raise DimensionError(f"a_bar has shape {self.gains.a_bar.shape}, expected {(Q, K + 1)}")
        if len(self.params.noise_power) != K + 1:
            raise DimensionError(
                f"{len(self.params.noise_power)} noise powers for {K + 1} nodes"
            )

    @property
    def n_users(self) -> int:
        return self.geometry.n_users

    @property
    def n_targets(self) -> int:
        return self.geometry.n_targets

    @property
    def n_nodes(self) -> int:
        return self.geometry.n_users + 1

    @property
    def bs_index(self) -> int:
        return self.geometry.n_users

    @cached_property
    def noise(self) -> np.ndarray:
        return _readonly(np.asarray(self.params.noise_power))

    @cached_property
    def tx_steering(self) -> np.ndarray:
        """a_T(phi_q) for every target, shape (Q, N_T)."""
        return _readonly(np.stack([steering_vector(a, self.params.n_tx) for a in self.gains.aod]))

    def with_gains(self, a_bar: np.ndarray) -> "Scenario":
        """Copy with replaced reflection coefficients (same angles)."""
        gains = SensingLinkGains(_readonly(np.asarray(a_bar, dtype=complex)),
                                 self.gains.aod, self.gains.aoa)
        return Scenario(self.params, self.geometry, gains, self.channels, self.seed)


def steering_vector(angle: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(-j*pi*p*cos(angle))``, p = 0..n-1."""
    if int(n) != n or n < 1:
        raise DimensionError(f"antenna count must be >= 1, got {n!r}")
    p = np.arange(int(n))
    return np.exp(-1j * np.pi * p * np.cos(angle))


def _angle(vec: np.ndarray) -> np.ndarray:
    """atan2 folded onto (-pi, pi]."""
    a = np.arctan2(vec[..., 1], vec[..., 0])
    return np.where(a <= -np.pi, a + 2 * np.pi, a)


def link_delay_doppler(scenario: Scenario, q: int, m: int) -> tuple:
    """Normalized delay and Doppler of the BS -> target q -> node m path.

    These are ground-truth metadata; they do not enter the Fisher information.
    """
    geo, par = scenario.geometry, scenario.params
    if not (0 <= q < scenario.n_targets and 0 <= m < scenario.n_nodes):
        raise IndexError(f"target {q} / node {m} out of range")
    d1 = geo.bs_target_distances()[q]
    d2 = geo.target_node_distances()[q, m]
    tau = (d1 + d2) / geo.c0
    fd = -(geo.target_vel[q] * par.f_c / geo.c0) * (
        math.cos(scenario.gains.aod[q]) + math.cos(scenario.gains.aoa[q, m])
    )
    return tau * par.delta_f, fd * par.t_sym


def bistatic_gain_power(d_bs_target, d_target_node, wavelength, gain=1.0, rcs=1.0):
    """|a_bar|^2 from the bistatic radar equation (vectorized)."""
    d1 = np.asarray(d_bs_target, dtype=float)
    d2 = np.asarray(d_target_node, dtype=float)
    if np.any(d1 <= 0) or np.any(d2 <= 0):
        raise GeometryError("zero link distance")
    return gain * wavelength**2 * rcs / ((4 * np.pi) ** 3 * d1**2 * d2**2)


def bistatic_gain(scenario: Scenario, q: int, m: int) -> complex:
    return complex(scenario.gains.a_bar[q, m])


def free_space_path_loss(distance, f_c, c0=299_792_458.0):
    lam = c0 / f_c
    return (lam / (4 * np.pi * np.asarray(distance, dtype=float))) ** 2


def generate_channels(params: SystemParams, geometry: Geometry, rng: np.random.Generator,
                      kappa: float = 10.0) -> ChannelSet:
    """Rician LoS + i.i.d. Gaussian channels with free-space path loss.

    ``E||h_{k,i}||^2 = PL_k * N_T`` for every user and subcarrier.
    """
    K, Nc, Nt = geometry.n_users, params.n_sc, params.n_tx
    rel = geometry.user_pos - geometry.bs_pos
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist <= 0):
        raise GeometryError("a user coincides with the BS")
    pl = free_space_path_loss(dist, params.f_c, geometry.c0)
    los = np.stack([steering_vector(a, Nt) for a in _angle(rel)])  # (K, Nt)
    g = (rng.standard_normal((K, Nc, Nt)) + 1j * rng.standard_normal((K, Nc, Nt))) / np.sqrt(2)
    w_los = np.sqrt(kappa / (1 + kappa))
    w_nlos = np.sqrt(1 / (1 + kappa))
    h = np.sqrt(pl)[:, None, None] * (w_los * los[:, None, :] + w_nlos * g)
    return ChannelSet(h)


def save_channels(channels: ChannelSet, path) -> None:
    K, Nc, Nt = channels.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"{K},{Nc},{Nt}\n")
        for k in range(K):
            for i in range(Nc):
                for p in range(Nt):
                    val = channels.h[k, i, p]
                    fh.write(f"{k},{i},{p},{float(val.real)!r},{float(val.imag)!r}\n")


def load_channels(path) -> ChannelSet:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ChannelFileError(f"{path}: empty file")
    try:
        K, Nc, Nt = (int(x) for x in rows[0])
    except ValueError:
        raise ChannelFileError(f"{path}: header must be 'K,N_c,N_T', got {rows[0]!r}") from None
    if min(K, Nc, Nt) < 1:
        raise DimensionError(f"{path}: header dimensions must be >= 1")
    h = np.zeros((K, Nc, Nt), dtype=complex)
    seen = np.zeros((K, Nc, Nt), dtype=bool)
    names = ("k", "i", "p", "re", "im")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ChannelFileError(f"{path}: row {lineno}: expected 5 fields, got {len(row)}")
        vals = []
        for name, tok, conv in zip(names, row, (int, int, int, float, float)):
            try:
                vals.append(conv(tok))
            except ValueError:
                raise ChannelFileError(
                    f"{path}: row {lineno}, field '{name}': cannot parse {tok!r}"
                ) from None
        k, i, p, re, im = vals
        if not (0 <= k < K and 0 <= i < Nc and 0 <= p < Nt):
            raise DimensionError(
                f"{path}: row {lineno}: index (k={k}, i={i}, p={p}) outside header {K},{Nc},{Nt}"
            )
        h[k, i, p] = complex(re, im)
        seen[k, i, p] = True
    if not seen.all():
        missing_users = sorted(set(np.nonzero(~seen)[0].tolist()))
        raise DimensionError(
            f"{path}: header declares K={K}, N_c={Nc}, N_T={Nt} but entries are "
            f"missing (users {missing_users})"
        )
    return ChannelSet(h)


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative scenario description; ``build_scenario`` is a pure function of it."""

    params: SystemParams
    bs_pos: Sequence[float]
    user_pos: Sequence[Sequence[float]]
    target_pos: Sequence[Sequence[float]]
    target_vel: Optional[Sequence[float]] = None
    c0: float = 299_792_458.0
    gain: float = 1.0
    rcs: Union[float, Sequence[float]] = 1.0
    kappa: float = 10.0
    seed: int = 0
    channel_file: Optional[str] = None


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    targets = np.asarray(cfg.target_pos, dtype=float).reshape(-1, 2)
    vel = np.zeros(len(targets)) if cfg.target_vel is None else cfg.target_vel
    geo = Geometry(cfg.bs_pos, cfg.user_pos, targets, vel, cfg.c0)
    par = cfg.params
    K, Q = geo.n_users, geo.n_targets
    if len(par.noise_power) == 1:
        par = SystemParams(par.n_tx, par.n_sc, par.n_sym, par.f_c, par.delta_f, par.t_sym,
                           par.p_total, par.noise_power * (K + 1))

    gain_ss, chan_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    gain_rng = np.random.default_rng(gain_ss)
    chan_rng = np.random.default_rng(chan_ss)

    aod = _angle(geo.target_pos - geo.bs_pos)
    aoa = _angle(geo.target_pos[:, None, :] - geo.node_pos[None, :, :])
    rcs = np.broadcast_to(np.asarray(cfg.rcs, dtype=float), (Q,))
    lam = geo.c0 / par.f_c
    power = bistatic_gain_power(geo.bs_target_distances()[:, None],
                                geo.target_node_distances(), lam, cfg.gain, rcs[:, None])
    phase = gain_rng.uniform(0.0, 2 * np.pi, size=(Q, K + 1))
    gains = SensingLinkGains(_readonly(np.sqrt(power) * np.exp(1j * phase)),
                             _readonly(aod), _readonly(aoa))

    if cfg.channel_file is not None:
        channels = load_channels(cfg.channel_file)
        seed = "ingested"
    else:
        channels = generate_channels(par, geo, chan_rng, cfg.kappa)
        seed = cfg.seed
    return Scenario(par, geo, gains, channels, seed)
