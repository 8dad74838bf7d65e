"""CCT computation and CCT sensitivities for staged DAE fault scenarios."""

from .cct import (CctConfig, CctResult, Mechanism, MechanismKind, cct_sensitivity,
                  classify_mechanism, compute_cct, fd_oracle, judge_stability)
from .config import ConfigError, RunConfig, load_config, parse_config
from .estimator import CctEstimator
from .integrator import IntegratorConfig, Trajectory, simulate
from .model import ParamSet, Point, ScenarioModel, StageModel
from .systems import CATALOG, build_system

__version__ = "0.1.0"

__all__ = [
    "CATALOG", "CctConfig", "CctEstimator", "CctResult", "ConfigError", "IntegratorConfig",
    "Mechanism", "MechanismKind", "ParamSet", "Point", "RunConfig", "ScenarioModel",
    "StageModel", "Trajectory", "build_system", "cct_sensitivity", "classify_mechanism",
    "compute_cct", "fd_oracle", "judge_stability", "load_config", "parse_config", "simulate",
]
