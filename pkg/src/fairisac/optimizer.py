"""Riemannian conjugate gradient on the power sphere.

Directions follow Polak-Ribiere (clamped at zero) with the previous direction
and gradient carried over by tangent projection; steps come from a
backtracking Armijo search followed by the normalizing retraction.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .gradients import _rate_grad_blocks, objective_grad_from_eval
from .manifold import ComplexSphere, real_inner
from .metrics import (BeamformingState, SensingMode, SingularFIMError, evaluate,
                      penalized_value, rate_shortfall)
from .scenario import Scenario

log = logging.getLogger(__name__)


class Termination(enum.Enum):
    GRAD_TOL = "GradTol"
    MAX_ITER = "MaxIter"
    LINE_SEARCH_STALL = "LineSearchStall"


class InitStrategy(enum.Enum):
    MRT = "mrt"
    RANDOM = "random"
    PROVIDED = "provided"


@dataclass(frozen=True)
class ArmijoParams:
    c1: float = 1e-4
    shrink: float = 0.5
    init_step: float = 1.0
    max_backtracks: int = 40
    warm_start: str = "interp"

    def __post_init__(self):
        if not 0 < self.c1 <= 0.5:
            raise ValueError("armijo c1 must lie in (0, 0.5]")
        if not 0 < self.shrink < 1:
            raise ValueError("armijo shrink must lie in (0, 1)")
        if not self.init_step > 0:
            raise ValueError("armijo init_step must be > 0")
        if self.max_backtracks < 0:
            raise ValueError("armijo max_backtracks must be >= 0")
        if self.warm_start not in ("previous", "interp"):
            raise ValueError("armijo warm_start must be 'previous' or 'interp'")


@dataclass(frozen=True)
class OptimizerConfig:
    """Objective and solver settings.

    ``rate_unit`` is the rate (bit/s) that counts as one unit of shortfall in
    the penalty ``rho/2 * sum_k ([r_min - R_k]_+ / rate_unit)^2``.
    ``grad_tol`` is relative to the initial Riemannian gradient norm unless
    ``grad_tol_relative`` is False.
    """

    alpha: float = 0.0
    rho: float = 1e4
    r_min: float = 0.0
    rate_unit: float = 1.0
    max_iter: int = 500
    grad_tol: float = 1e-6
    grad_tol_relative: bool = True
    armijo: ArmijoParams = field(default_factory=ArmijoParams)
    restart_period: int = 100
    mode: SensingMode = SensingMode.MULTISTATIC
    init: InitStrategy = InitStrategy.MRT
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", SensingMode(self.mode))
        object.__setattr__(self, "init", InitStrategy(self.init))
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.r_min < 0:
            raise ValueError("r_min must be >= 0")
        if not self.rate_unit > 0:
            raise ValueError("rate_unit must be > 0")
        if self.max_iter < 0 or self.restart_period < 1:
            raise ValueError("max_iter must be >= 0 and restart_period >= 1")
        if not self.grad_tol >= 0:
            raise ValueError("grad_tol must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    objective: float
    utility: float
    crlbs: tuple
    rates: tuple
    grad_norm: float
    step: float
    beta: float
    backtracks: int
    power_residual: float
    tangency_residual: float


@dataclass(frozen=True)
class RunResult:
    trace: tuple
    final_beams: BeamformingState
    termination: Termination
    wall_time: float
    config: OptimizerConfig

    @property
    def final(self) -> IterationRecord:
        return self.trace[-1]

    @property
    def crlbs(self) -> np.ndarray:
        return np.asarray(self.final.crlbs)

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.final.rates)

    @property
    def rate_residual(self) -> float:
        """``max_k [r_min - R_k]_+`` in bit/s."""
        return float(np.max(np.maximum(self.config.r_min - self.rates, 0.0)))

    @property
    def iterations(self) -> int:
        return self.final.iter


class Problem:
    """Smooth objective on the sphere: ``value(z)`` and ``value_and_grad(z)``.

    ``value_and_grad`` returns ``(f, g, info)`` with ``g = df/dz*`` and ``info``
    a dict of extra per-point quantities stored in the trace.
    """

    def value(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def value_and_grad(self, z: np.ndarray) -> tuple:
        raise NotImplementedError


class BeamformingProblem(Problem):
    def __init__(self, scenario: Scenario, cfg: OptimizerConfig):
        self.scenario = scenario
        self.cfg = cfg

    def _beams(self, z) -> BeamformingState:
        return BeamformingState.for_scenario(self.scenario, z)

    def value(self, z):
        ev = evaluate(self.scenario, self._beams(z), self.cfg.mode)
        return penalized_value(ev, self.cfg)[0]

    def value_and_grad(self, z):
        beams = self._beams(z)
        ev = evaluate(self.scenario, beams, self.cfg.mode)
        f, util, c, _ = penalized_value(ev, self.cfg)
        g = objective_grad_from_eval(self.scenario, beams, ev, self.cfg)
        return f, g, {"utility": util, "crlbs": tuple(c.tolist()),
                      "rates": tuple(ev.rates.tolist())}


class RateShortfallProblem(Problem):
    """Communication-only objective ``1/2 * sum_k ([target - R_k]_+ / rate_unit)^2``.

    Sensing is ignored, so the sensing beams only add interference and are
    driven towards zero.
    """

    def __init__(self, scenario: Scenario, target: float, rate_unit: float = 1e6):
        self.scenario = scenario
        self.target = target
        self.rate_unit = rate_unit

    def _terms(self, z):
        beams = BeamformingState.for_scenario(self.scenario, z)
        ev = evaluate(self.scenario, beams)
        return beams, ev, rate_shortfall(ev.rates, self.target, self.rate_unit)

    def value(self, z):
        phi = self._terms(z)[2]
        return 0.5 * float(phi @ phi)

    def value_and_grad(self, z):
        beams, ev, phi = self._terms(z)
        g = -_rate_grad_blocks(self.scenario, ev, phi).reshape(-1) / self.rate_unit
        return 0.5 * float(phi @ phi), g, {"rates": tuple(ev.rates.tolist())}


def max_min_rate(scenario: Scenario, max_iter: int = 1000, seed: int = 0) -> float:
    """Best minimum user rate (bit/s) reachable without any sensing requirement.

    Approximated by pushing every rate towards a common target well above the
    current best with the same conjugate-gradient machinery.
    """
    sphere = ComplexSphere(scenario.params.p_total)
    z = init_beams(scenario, InitStrategy.MRT).z
    cfg = OptimizerConfig(max_iter=max_iter, grad_tol=1e-10, seed=seed)
    best = float(np.min(evaluate(scenario, BeamformingState.for_scenario(scenario, z)).rates))
    for _ in range(3):
        problem = RateShortfallProblem(scenario, 2.0 * best, rate_unit=max(best, 1.0))
        _, z, _ = rcg(problem, sphere, z, cfg)
        rates = evaluate(scenario, BeamformingState.for_scenario(scenario, z)).rates
        best = max(best, float(np.min(rates)))
    return best


class LineSearchResult(NamedTuple):
    accepted: bool
    step: float
    z: np.ndarray
    value: float
    backtracks: int


def armijo_search(value: Callable[[np.ndarray], float], sphere: ComplexSphere, z: np.ndarray,
                  f_z: float, direction: np.ndarray, g: np.ndarray, step0: float,
                  params: ArmijoParams = ArmijoParams()) -> LineSearchResult:
    """Largest ``step0 * shrink^t`` with ``f(R_z(step*d)) <= f(z) + c1*step*<g, d>``.

    Trial points where the objective is undefined (singular FIM) are rejected.
    On failure the original point is returned with ``accepted=False``.
    """
    slope = real_inner(g, direction)
    if not slope < 0:
        raise ValueError("direction is not a descent direction")
    step = step0
    for t in range(params.max_backtracks + 1):
        trial = sphere.retract(z, step, direction)
        try:
            f_trial = value(trial)
        except SingularFIMError:
            f_trial = np.inf
        if f_trial <= f_z + params.c1 * step * slope:
            return LineSearchResult(True, step, trial, f_trial, t)
        step *= params.shrink
    return LineSearchResult(False, 0.0, z, f_z, params.max_backtracks)


def polak_ribiere_beta(g_curr: np.ndarray, g_prev_projected: np.ndarray,
                       g_prev_norm_sq: float) -> Optional[float]:
    """PR+ coefficient; ``None`` signals a restart (vanishing previous gradient)."""
    if not g_prev_norm_sq > 0:
        return None
    beta = real_inner(g_curr, g_curr - g_prev_projected) / g_prev_norm_sq
    return max(beta, 0.0)


def rcg(problem: Problem, sphere: ComplexSphere, z0: np.ndarray, cfg: OptimizerConfig,
        callback: Optional[Callable[[IterationRecord, np.ndarray], None]] = None):
    """Run the conjugate-gradient loop; returns ``(trace, z, termination)``."""
    z = np.array(z0, dtype=complex)
    arm = cfg.armijo
    f, g, info = problem.value_and_grad(z)
    rg = sphere.riemannian_grad(z, g)
    gnorm = float(np.linalg.norm(rg))
    tol = cfg.grad_tol * gnorm if cfg.grad_tol_relative else cfg.grad_tol

    def make_record(r, step, beta, bt, tang):
        rec = IterationRecord(
            iter=r, objective=float(f), utility=float(info.get("utility", f)),
            crlbs=info.get("crlbs", ()), rates=info.get("rates", ()),
            grad_norm=gnorm, step=float(step), beta=float(beta), backtracks=int(bt),
            power_residual=abs(real_inner(z, z) - sphere.power) / sphere.power,
            tangency_residual=float(tang))
        if callback is not None:
            callback(rec, z)
        return rec

    trace = [make_record(0, 0.0, 0.0, 0, 0.0)]
    prev_rg = prev_dir = None
    prev_step = prev_f = None
    termination = Termination.MAX_ITER
    for r in range(1, cfg.max_iter + 1):
        if gnorm <= tol:
            termination = Termination.GRAD_TOL
            break
        beta = 0.0
        direction = -rg
        if prev_dir is not None and (r - 1) % cfg.restart_period != 0:
            b = polak_ribiere_beta(rg, sphere.project(z, prev_rg), real_inner(prev_rg, prev_rg))
            if b is not None and b > 0:
                cand = -rg + b * sphere.project(z, prev_dir)
                if real_inner(rg, cand) < 0:
                    beta, direction = b, cand
        if prev_step is None:
            step0 = arm.init_step * np.sqrt(sphere.power) / np.linalg.norm(direction)
        elif arm.warm_start == "interp":
            # step at which a quadratic model reproduces the previous decrease
            slope = real_inner(rg, direction)
            step0 = max(prev_step / arm.shrink, 2.0 * (f - prev_f) / slope) if slope < 0 else prev_step
        else:
            step0 = prev_step / arm.shrink
        prev_f = f
        # slopes use the tangent gradient: equal to Re{g^H d} for tangent d, but
        # free of the radial roundoff when g is nearly parallel to z
        ls = armijo_search(problem.value, sphere, z, f, direction, rg, step0, arm)
        if not ls.accepted and beta != 0.0:
            beta, direction = 0.0, -rg
            ls = armijo_search(problem.value, sphere, z, f, direction, rg, step0, arm)
        if not ls.accepted:
            termination = Termination.LINE_SEARCH_STALL
            break
        tang = sphere.tangency_residual(z, direction)
        prev_rg, prev_dir, prev_step = rg, direction, ls.step
        z = ls.z
        f, g, info = problem.value_and_grad(z)
        rg = sphere.riemannian_grad(z, g)
        gnorm = float(np.linalg.norm(rg))
        trace.append(make_record(r, ls.step, beta, ls.backtracks, tang))
    else:
        if cfg.max_iter == 0 or gnorm > tol:
            termination = Termination.MAX_ITER
        else:
            termination = Termination.GRAD_TOL
    return trace, z, termination


def init_beams(scenario: Scenario, strategy=InitStrategy.MRT,
               rng: Optional[np.random.Generator] = None) -> BeamformingState:
    """Initial point on the sphere.

    MRT: ``v_{k,i}`` along ``h_{k,i}``, ``w_i`` along the mean transmit steering
    vector of the targets, every block with equal power.
    """
    par = scenario.params
    K = scenario.n_users
    strategy = InitStrategy(strategy)
    if strategy is InitStrategy.MRT:
        H = scenario.channels.h
        v = H / np.linalg.norm(H, axis=2, keepdims=True)
        a = scenario.tx_steering.mean(axis=0)
        if np.linalg.norm(a) < 1e-8 * np.sqrt(par.n_tx):
            a = scenario.tx_steering[0]
        w = np.broadcast_to(a / np.linalg.norm(a), (par.n_sc, par.n_tx))
        blocks = BeamformingState.from_parts(v, w).blocks
    elif strategy is InitStrategy.RANDOM:
        rng = np.random.default_rng(0) if rng is None else rng
        shape = (par.n_sc, K + 1, par.n_tx)
        blocks = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    else:
        raise ValueError("PROVIDED initialization needs explicit beams")
    blocks = blocks * np.sqrt(par.p_total) / np.linalg.norm(blocks)
    return BeamformingState(blocks)


def optimize(scenario: Scenario, cfg: OptimizerConfig,
             beams: Optional[BeamformingState] = None,
             callback: Optional[Callable[[IterationRecord, np.ndarray], None]] = None) -> RunResult:
    """Minimize the penalized fairness objective from ``beams`` or ``cfg.init``."""
    t0 = time.perf_counter()
    par = scenario.params
    sphere = ComplexSphere(par.p_total)
    if beams is None:
        beams = init_beams(scenario, cfg.init, np.random.default_rng(cfg.seed))
    z0 = beams.z * (np.sqrt(par.p_total) / np.linalg.norm(beams.z))
    problem = BeamformingProblem(scenario, cfg)
    try:
        problem.value(z0)
    except SingularFIMError as exc:
        raise SingularFIMError(exc.target, exc.det,
                               "at the initial point; use a different initialization "
                               "(a zero sensing beam makes every FIM singular)") from None
    trace, z, term = rcg(problem, sphere, z0, cfg, callback)
    log.info("rcg finished after %d iterations (%s)", trace[-1].iter, term.value)
    return RunResult(tuple(trace), BeamformingState.for_scenario(scenario, z), term,
                     time.perf_counter() - t0, cfg)
