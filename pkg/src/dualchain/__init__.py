"""Continuous-measurement state transfer across two coupled spin chains."""

__version__ = "0.1.0"

from .model import ChainConfig, CodedQubit, ConfigError, EffectiveModel, build_effective_model
from .protocol import run_projective_baseline, run_trajectory, simulate_arrivals
from .ensemble import RunPlan, RunResult, run_ensemble

__all__ = [
    "ChainConfig", "CodedQubit", "ConfigError", "EffectiveModel", "build_effective_model",
    "run_trajectory", "simulate_arrivals", "run_projective_baseline",
    "RunPlan", "RunResult", "run_ensemble",
]
