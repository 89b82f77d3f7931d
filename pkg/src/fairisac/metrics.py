"""Communication and sensing performance metrics.

All quantities are evaluated at the statistical level: symbols are unit
variance and drop out. Rates are in bit/s (log2), powers in W.

The per-call helpers (``sinr``, ``xi``, ``fim`` ...) are thin views on
:func:`evaluate`, which computes every intermediate for all users, targets,
nodes and subcarriers in one vectorized pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .scenario import DimensionError, Scenario

if TYPE_CHECKING:
    from .optimizer import OptimizerConfig

EIGHT_PI_SQ = 8.0 * np.pi**2
#: Determinant floor below which a FIM is treated as singular.
DET_TOL = 1e-30


class SingularFIMError(ArithmeticError):
    def __init__(self, target: int, det: float, hint: str = ""):
        msg = f"Fisher information of target {target} is singular (det={det:.3e})"
        super().__init__(f"{msg} {hint}" if hint else msg)
        self.target = target
        self.det = det


class SensingMode(enum.Enum):
    MULTISTATIC = "multistatic"
    MONOSTATIC = "monostatic"


class BeamformingState:
    """Stacked beamformers.

    ``blocks[i, k]`` is ``v_{k,i}`` for ``k < K`` and ``w_i`` for ``k == K``;
    ``z = blocks.ravel()`` therefore follows the per-subcarrier order
    ``[v_0, ..., v_{K-1}, w]`` for ``i = 0 .. N_c-1``.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        blocks = np.asarray(blocks, dtype=complex)
        if blocks.ndim != 3 or blocks.shape[1] < 2:
            raise DimensionError(f"beam blocks must have shape (N_c, K+1, N_T), got {blocks.shape}")
        self.blocks = blocks

    @classmethod
    def from_vector(cls, z, n_sc: int, n_users: int, n_tx: int) -> "BeamformingState":
        z = np.asarray(z, dtype=complex)
        if z.shape != (n_sc * (n_users + 1) * n_tx,):
            raise DimensionError(
                f"stacked vector has length {z.size}, expected {n_sc * (n_users + 1) * n_tx}"
            )
        return cls(z.reshape(n_sc, n_users + 1, n_tx))

    @classmethod
    def from_parts(cls, v, w) -> "BeamformingState":
        """Build from ``v`` of shape (K, N_c, N_T) and ``w`` of shape (N_c, N_T)."""
        v = np.asarray(v, dtype=complex)
        w = np.asarray(w, dtype=complex)
        if v.ndim != 3 or w.shape != v.shape[1:]:
            raise DimensionError(f"incompatible shapes v{v.shape}, w{w.shape}")
        return cls(np.concatenate([v.transpose(1, 0, 2), w[:, None, :]], axis=1))

    @classmethod
    def for_scenario(cls, scenario: Scenario, z) -> "BeamformingState":
        p = scenario.params
        return cls.from_vector(z, p.n_sc, scenario.n_users, p.n_tx)

    @property
    def z(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    @property
    def v(self) -> np.ndarray:
        return self.blocks[:, :-1, :].transpose(1, 0, 2)

    @property
    def w(self) -> np.ndarray:
        return self.blocks[:, -1, :]

    @property
    def power(self) -> float:
        return float(np.vdot(self.z, self.z).real)

    def on_manifold(self, p_total: float, rtol: float = 1e-9) -> bool:
        return abs(self.power - p_total) <= rtol * p_total

    def copy(self) -> "BeamformingState":
        return BeamformingState(self.blocks.copy())

    def __repr__(self):
        n_sc, kp1, n_tx = self.blocks.shape
        return f"BeamformingState(N_c={n_sc}, K={kp1 - 1}, N_T={n_tx}, power={self.power:.6g})"


@dataclass(frozen=True)
class Fim2x2:
    """Symmetric FIM over (normalized delay, normalized Doppler)."""

    j11: float
    j12: float
    j22: float

    @property
    def det(self) -> float:
        return self.j11 * self.j22 - self.j12**2

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.j11, self.j12], [self.j12, self.j22]])

    def is_psd(self) -> bool:
        eps = 1e-10 * max(1.0, abs(self.j11 * self.j22))
        return self.j11 >= 0 and self.j22 >= 0 and self.det >= -eps

    @classmethod
    def from_matrix(cls, m) -> "Fim2x2":
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 1]))


def symbol_sums(n_sym: int) -> tuple:
    """``(sum mu, sum mu^2)`` over ``mu = 0 .. n_sym-1``."""
    s1 = n_sym * (n_sym - 1) / 2
    s2 = n_sym * (n_sym - 1) * (2 * n_sym - 1) / 6
    return s1, s2


def node_mask(scenario: Scenario, mode: SensingMode) -> np.ndarray:
    mask = np.ones(scenario.n_nodes)
    if SensingMode(mode) is SensingMode.MONOSTATIC:
        mask[: scenario.n_users] = 0.0
    return mask


@dataclass
class Evaluation:
    """Every intermediate quantity needed by the objective and its gradient."""

    hz: np.ndarray  # (K, N_c, K+1): h_{k,i}^H z_{l,i}; l = K is w_i
    signal: np.ndarray  # (K, N_c)  S_{k,i}
    interference: np.ndarray  # (K, N_c)  I_{k,i}, noise included
    sinr: np.ndarray  # (K, N_c)
    rates: np.ndarray  # (K,)
    gain_sq: np.ndarray  # (Q, M)  |a_bar|^2
    block_power: np.ndarray  # (N_c,)  sum_l ||v_l||^2 + ||w||^2
    comm_interf: np.ndarray  # (M, N_c)  sum_{l != m} |h_m^H v_l|^2 (0 for the BS)
    sigma2: np.ndarray  # (Q, M, N_c)
    aw: np.ndarray  # (Q, N_c)  a_T(phi_q)^H w_i
    xi: np.ndarray  # (Q, M, N_c)
    mask: np.ndarray  # (M,) node selection of the sensing mode
    fim: np.ndarray  # (Q, 2, 2)


def evaluate(scenario: Scenario, beams: BeamformingState,
             mode: SensingMode = SensingMode.MULTISTATIC) -> Evaluation:
    par = scenario.params
    K = scenario.n_users
    Z = beams.blocks
    if Z.shape != (par.n_sc, K + 1, par.n_tx):
        raise DimensionError(
            f"beams have shape {Z.shape}, scenario expects {(par.n_sc, K + 1, par.n_tx)}"
        )
    H = scenario.channels.h
    noise = scenario.noise

    hz = np.einsum("kip,ilp->kil", H.conj(), Z)
    mag = np.abs(hz) ** 2
    idx = np.arange(K)
    signal = mag[idx, :, idx]
    comm_total = mag[:, :, :K].sum(axis=2)
    interference = comm_total - signal + mag[:, :, K] + noise[:K, None]
    sinr = signal / interference
    rates = par.bandwidth * np.log2(1.0 + sinr).sum(axis=1)

    gain_sq = np.abs(scenario.gains.a_bar) ** 2
    block_power = np.sum(np.abs(Z) ** 2, axis=(1, 2))
    comm_interf = np.zeros((K + 1, par.n_sc))
    comm_interf[:K] = comm_total - signal
    sigma2 = (noise[None, :, None] + comm_interf[None, :, :]
              + gain_sq[:, :, None] * block_power[None, None, :])
    aw = scenario.tx_steering.conj() @ Z[:, K, :].T
    xi = (EIGHT_PI_SQ / par.n_sc) * gain_sq[:, :, None] * (np.abs(aw) ** 2)[:, None, :] / sigma2

    mask = node_mask(scenario, mode)
    fim = _fim_from_xi(xi, mask, par.n_sym)
    return Evaluation(hz, signal, interference, sinr, rates, gain_sq, block_power,
                      comm_interf, sigma2, aw, xi, mask, fim)


def _fim_from_xi(xi: np.ndarray, mask: np.ndarray, n_sym: int) -> np.ndarray:
    s1, s2 = symbol_sums(n_sym)
    i = np.arange(xi.shape[2], dtype=float)
    per_sc = np.einsum("qmi,m->qi", xi, mask)
    J = np.empty((xi.shape[0], 2, 2))
    J[:, 0, 0] = n_sym * per_sc @ (i * i)
    J[:, 1, 1] = s2 * per_sc.sum(axis=1)
    J[:, 0, 1] = J[:, 1, 0] = -s1 * (per_sc @ i)
    return J


# ---------------------------------------------------------------- communication


def sinr_terms(scenario: Scenario, beams: BeamformingState, k: int, i: int) -> tuple:
    """``(S_{k,i}, I_{k,i})``: desired power and interference-plus-noise."""
    h = scenario.channels.h[k, i]
    Zi = beams.blocks[i]
    g = np.abs(Zi.conj() @ h) ** 2  # |h^H z_l|^2 for every block
    s = g[k]
    return float(s), float(g.sum() - s + scenario.noise[k])


def sinr(scenario: Scenario, beams: BeamformingState, k: int, i: int) -> float:
    s, interf = sinr_terms(scenario, beams, k, i)
    return s / interf


def rate(scenario: Scenario, beams: BeamformingState, k: int) -> float:
    gammas = [sinr(scenario, beams, k, i) for i in range(scenario.params.n_sc)]
    return float(scenario.params.bandwidth * np.sum(np.log2(1.0 + np.asarray(gammas))))


def rates(scenario: Scenario, beams: BeamformingState) -> np.ndarray:
    return evaluate(scenario, beams).rates


# ---------------------------------------------------------------------- sensing


def sensing_noise_var(scenario: Scenario, beams: BeamformingState, q: int, m: int, i: int) -> float:
    """Interference-plus-noise power at node ``m`` for the echo of target ``q``.

    For the BS (``m == K``) the downlink interference sum is zero: no downlink
    channel is defined towards the BS itself.
    """
    K = scenario.n_users
    Zi = beams.blocks[i]
    total = scenario.noise[m] + abs(scenario.gains.a_bar[q, m]) ** 2 * np.sum(np.abs(Zi) ** 2)
    if m < K:
        h = scenario.channels.h[m, i]
        total += sum(abs(np.vdot(h, Zi[l])) ** 2 for l in range(K) if l != m)
    return float(total)


def xi(scenario: Scenario, beams: BeamformingState, q: int, m: int, i: int) -> float:
    a = scenario.tx_steering[q]
    w = beams.blocks[i, -1]
    num = EIGHT_PI_SQ * abs(scenario.gains.a_bar[q, m]) ** 2 * abs(np.vdot(a, w)) ** 2
    return float(num / (scenario.params.n_sc * sensing_noise_var(scenario, beams, q, m, i)))


def fims(scenario: Scenario, beams: BeamformingState,
         mode: SensingMode = SensingMode.MULTISTATIC) -> list:
    return [Fim2x2.from_matrix(J) for J in evaluate(scenario, beams, mode).fim]


def fim(scenario: Scenario, beams: BeamformingState, q: int,
        mode: SensingMode = SensingMode.MULTISTATIC) -> Fim2x2:
    return fims(scenario, beams, mode)[q]


def crlb(f: Fim2x2, target: Optional[int] = None) -> float:
    """``tr(J^{-1})`` of a 2x2 FIM."""
    det = f.det
    if not det > DET_TOL:
        raise SingularFIMError(-1 if target is None else target, det)
    return (f.j11 + f.j22) / det


def crlbs_from_fim(J: np.ndarray) -> np.ndarray:
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] ** 2
    bad = np.nonzero(~(det > DET_TOL))[0]
    if bad.size:
        raise SingularFIMError(int(bad[0]), float(det[bad[0]]))
    return (J[:, 0, 0] + J[:, 1, 1]) / det


def crlbs(scenario: Scenario, beams: BeamformingState,
          mode: SensingMode = SensingMode.MULTISTATIC) -> np.ndarray:
    return crlbs_from_fim(evaluate(scenario, beams, mode).fim)


def fairness_utility(crlb_values, alpha: float) -> float:
    """``sum_q c_q^(1+alpha) / (1+alpha)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    c = np.asarray(crlb_values, dtype=float)
    return float(np.sum(c ** (1.0 + alpha)) / (1.0 + alpha))


def alpha_fairness(scenario: Scenario, beams: BeamformingState, alpha: float,
                   mode: SensingMode = SensingMode.MULTISTATIC) -> float:
    return fairness_utility(crlbs(scenario, beams, mode), alpha)


# --------------------------------------------------------------------- penalty


def rate_shortfall(rate_values, r_min: float, rate_unit: float = 1.0) -> np.ndarray:
    """Hinge ``[r_min - R_k]_+`` for every user, in units of ``rate_unit`` bit/s."""
    if r_min < 0:
        raise ValueError("r_min must be >= 0")
    return np.maximum(r_min - np.asarray(rate_values, dtype=float), 0.0) / rate_unit


def rate_penalty(scenario: Scenario, beams: BeamformingState, k: int, r_min: float,
                 rate_unit: float = 1.0) -> float:
    return float(rate_shortfall(rate(scenario, beams, k), r_min, rate_unit))


def penalized_value(ev: Evaluation, cfg: "OptimizerConfig") -> tuple:
    """``(F_bar, F_alpha, crlbs, shortfall)`` from a precomputed evaluation."""
    c = crlbs_from_fim(ev.fim)
    f_alpha = fairness_utility(c, cfg.alpha)
    phi = rate_shortfall(ev.rates, cfg.r_min, cfg.rate_unit)
    return f_alpha + 0.5 * cfg.rho * float(phi @ phi), f_alpha, c, phi


def objective(scenario: Scenario, beams: BeamformingState, cfg: "OptimizerConfig") -> float:
    """Penalized objective ``F_alpha + rho/2 * sum_k phi_k^2``."""
    return penalized_value(evaluate(scenario, beams, cfg.mode), cfg)[0]
