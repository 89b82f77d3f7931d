"""Alpha-fair multistatic ISAC beamforming.

Joint design of per-subcarrier communication beams ``v_k`` and a sensing beam
``w`` under a total power budget, minimizing an alpha-fair function of
per-target delay/Doppler CRLBs with a quadratic penalty on user rate
shortfalls. The optimizer is a Riemannian conjugate gradient on the complex
sphere.
"""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .gradients import check_gradients, grad_objective
from .manifold import ComplexSphere
from .metrics import (BeamformingState, SensingMode, SingularFIMError, crlbs, evaluate,
                      fairness_utility, fims, objective, rates)
from .optimizer import (ArmijoParams, InitStrategy, OptimizerConfig, RunResult, Termination,
                        max_min_rate, optimize)
from .scenario import Geometry, Scenario, ScenarioConfig, SystemParams, build_scenario

__version__ = "0.1.0"

__all__ = [
    "ArmijoParams", "BeamformingState", "ComplexSphere", "ConfigError", "ExperimentConfig",
    "Geometry", "InitStrategy", "OptimizerConfig", "RunResult", "Scenario", "ScenarioConfig",
    "SensingMode", "SingularFIMError", "SystemParams", "Termination", "build_scenario",
    "check_gradients", "crlbs", "evaluate", "fairness_utility", "fims", "grad_objective",
    "load_config", "max_min_rate", "objective", "optimize", "parse_config", "rates",
]
