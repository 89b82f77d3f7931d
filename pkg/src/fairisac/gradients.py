"""Conjugate-Wirtinger gradients ``dF/dz*`` of rates, fairness utility and objective.

Convention: for a real function ``f`` of complex ``z``, ``g = df/dz*`` satisfies
``f(z + t d) = f(z) + 2 t Re{g^H d} + O(t^2)`` for every real step ``t``.
All gradients are returned in the stacked layout of ``BeamformingState.z``.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from .metrics import (EIGHT_PI_SQ, BeamformingState, Evaluation, SensingMode,
                      crlbs_from_fim, evaluate, rate_shortfall, symbol_sums)
from .scenario import Scenario

if TYPE_CHECKING:
    from .optimizer import OptimizerConfig

LN2 = np.log(2.0)


class OracleError(ArithmeticError):
    pass


def _rate_grad_blocks(scenario: Scenario, ev: Evaluation, weights: np.ndarray) -> np.ndarray:
    """``sum_k weights[k] * dR_k/dz*`` as (N_c, K+1, N_T) blocks."""
    K = scenario.n_users
    f = scenario.params.bandwidth / ((1.0 + ev.sinr) * LN2)  # (K, N_c)
    coef = np.broadcast_to((-f * ev.signal / ev.interference**2)[:, :, None], ev.hz.shape).copy()
    idx = np.arange(K)
    coef[idx, :, idx] = f / ev.interference
    coef *= np.asarray(weights, dtype=float)[:, None, None]
    return np.einsum("kil,kip->ilp", coef * ev.hz, scenario.channels.h)


def _fairness_weights(J: np.ndarray, alpha: float) -> np.ndarray:
    """``(tr J^-1)^alpha * J^-2`` per target, shape (Q, 2, 2)."""
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] ** 2
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -J[:, 0, 1] / det
    tr = inv[:, 0, 0] + inv[:, 1, 1]
    # exp/log form keeps (tr)^alpha finite when tr underflows
    scale = np.exp(alpha * np.log(np.maximum(tr, 1e-300)))
    return scale[:, None, None] * (inv @ inv)


def _fairness_grad_blocks(scenario: Scenario, ev: Evaluation, alpha: float,
                          Z: np.ndarray) -> np.ndarray:
    par = scenario.params
    K = scenario.n_users
    crlbs_from_fim(ev.fim)  # raises on singular FIMs
    Qw = _fairness_weights(ev.fim, alpha)
    s1, s2 = symbol_sums(par.n_sym)
    i = np.arange(par.n_sc, dtype=float)
    # dF/dxi_{q,m,i}
    c = -(Qw[:, 0, 0, None] * par.n_sym * i**2
          - 2.0 * Qw[:, 0, 1, None] * s1 * i
          + Qw[:, 1, 1, None] * s2)  # (Q, N_c)
    c = c[:, None, :] * ev.mask[None, :, None]  # (Q, M, N_c)

    A = c * ev.gain_sq[:, :, None] / ev.sigma2
    # self-interference |a_bar|^2 * ||z_i||^2 in sigma^2 touches every block
    G = -np.einsum("qmi,qmi->i", A, ev.xi)[:, None, None] * Z
    G[:, K, :] += (EIGHT_PI_SQ / par.n_sc) * np.einsum(
        "qi,qp->ip", A.sum(axis=1) * ev.aw, scenario.tx_steering)
    # downlink interference at user m from every other comm beam
    E = np.einsum("qmi,qmi->mi", c[:, :K], ev.xi[:, :K] / ev.sigma2[:, :K])  # (K, N_c)
    H = scenario.channels.h
    T = np.einsum("mi,mil,mip->ilp", E, ev.hz[:, :, :K], H)
    idx = np.arange(K)
    T -= (E * ev.hz[idx, :, idx])[:, :, None].transpose(1, 0, 2) * H.transpose(1, 0, 2)
    G[:, :K, :] -= T
    return G


def grad_rate(scenario: Scenario, beams: BeamformingState, k: int) -> np.ndarray:
    ev = evaluate(scenario, beams)
    weights = np.zeros(scenario.n_users)
    weights[k] = 1.0
    return _rate_grad_blocks(scenario, ev, weights).reshape(-1)


def grad_alpha_fairness(scenario: Scenario, beams: BeamformingState, alpha: float,
                        mode: SensingMode = SensingMode.MULTISTATIC) -> np.ndarray:
    ev = evaluate(scenario, beams, mode)
    return _fairness_grad_blocks(scenario, ev, alpha, beams.blocks).reshape(-1)


def objective_grad_from_eval(scenario: Scenario, beams: BeamformingState, ev: Evaluation,
                             cfg: "OptimizerConfig") -> np.ndarray:
    G = _fairness_grad_blocks(scenario, ev, cfg.alpha, beams.blocks)
    phi = rate_shortfall(ev.rates, cfg.r_min, cfg.rate_unit)
    if cfg.rho != 0 and np.any(phi > 0):
        G -= (cfg.rho / cfg.rate_unit) * _rate_grad_blocks(scenario, ev, phi)
    return G.reshape(-1)


def grad_objective(scenario: Scenario, beams: BeamformingState,
                   cfg: "OptimizerConfig") -> np.ndarray:
    ev = evaluate(scenario, beams, cfg.mode)
    return objective_grad_from_eval(scenario, beams, ev, cfg)


def fd_gradient_oracle(f: Callable[[np.ndarray], object], z, step: float = 1e-6) -> np.ndarray:
    """Central-difference conjugate-Wirtinger gradient of a real function.

    ``f`` may return a scalar or a 1-D array of real values; in the latter case
    the result has one row per output. The step for coordinate ``n`` is
    ``step * max(1, |z_n|)`` along both its real and imaginary part.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    z = np.asarray(z, dtype=complex)
    base = np.asarray(f(z), dtype=float)
    if not np.all(np.isfinite(base)):
        raise OracleError("objective is not finite at the base point")
    out = np.zeros(base.shape + z.shape, dtype=complex)
    zp = z.copy()
    for n in range(z.size):
        h = step * max(1.0, abs(z[n]))
        parts = []
        for unit in (1.0, 1j):
            zp[n] = z[n] + h * unit
            fp = np.asarray(f(zp), dtype=float)
            zp[n] = z[n] - h * unit
            fm = np.asarray(f(zp), dtype=float)
            zp[n] = z[n]
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise OracleError(f"objective is not finite near coordinate {n}")
            parts.append((fp - fm) / (2.0 * h))
        out[..., n] = 0.5 * (parts[0] + 1j * parts[1])
    return out


def relative_error(analytic, reference) -> float:
    """``max|a - r| / max|r|`` (0 when both vanish)."""
    a = np.asarray(analytic)
    r = np.asarray(reference)
    scale = np.max(np.abs(r))
    diff = np.max(np.abs(a - r))
    if scale == 0:
        return float(diff)
    return float(diff / scale)


def check_gradients(scenario: Scenario, cfg: "OptimizerConfig", n_states: int = 10,
                    seed: int = 0, alphas=(0.0, 1.0),
                    perturb: Optional[Callable[[str, np.ndarray], np.ndarray]] = None) -> dict:
    """Worst relative error of every analytic gradient family over random states.

    States are i.i.d. Gaussian on the power sphere. ``perturb(family, grad)``
    lets tests corrupt an analytic gradient to confirm the check bites.
    """
    from .metrics import fairness_utility, penalized_value

    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    par = scenario.params
    K = scenario.n_users
    rng = np.random.default_rng(seed)
    n = par.n_sc * (K + 1) * par.n_tx
    worst = {"rate": 0.0, **{f"fairness[alpha={a:g}]": 0.0 for a in alphas}, "objective": 0.0}

    for _ in range(n_states):
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        z *= np.sqrt(par.p_total) / np.linalg.norm(z)
        beams = BeamformingState.for_scenario(scenario, z)

        def values(zz):
            ev = evaluate(scenario, BeamformingState.for_scenario(scenario, zz), cfg.mode)
            c = crlbs_from_fim(ev.fim)
            fa = [fairness_utility(c, a) for a in alphas]
            return np.concatenate([ev.rates, fa, [penalized_value(ev, cfg)[0]]])

        fd = fd_gradient_oracle(values, z)
        ev = evaluate(scenario, beams, cfg.mode)
        analytic = {}
        for k in range(K):
            wk = np.zeros(K)
            wk[k] = 1.0
            analytic[("rate", k)] = _rate_grad_blocks(scenario, ev, wk).reshape(-1)
        for j, a in enumerate(alphas):
            analytic[(f"fairness[alpha={a:g}]", K + j)] = \
                _fairness_grad_blocks(scenario, ev, a, beams.blocks).reshape(-1)
        analytic[("objective", K + len(alphas))] = objective_grad_from_eval(scenario, beams, ev, cfg)

        for (family, row), g in analytic.items():
            if perturb is not None:
                g = perturb(family, g)
            worst[family] = max(worst[family], relative_error(g, fd[row]))
    return worst
