"""Lattice agreement protocols with deterministic network simulators and a property checker."""

from .checker import Verdict, check_bounds, check_gla, check_la, check_run, comparability_oracle
from .harness import Campaign, run_campaign, run_experiment
from .model import ConfigError, CrashSpec, DelayModel, ExperimentConfig, RunReport, validate_config
from .semilattice import join, join_all, leq, value

__all__ = [
    "Campaign",
    "ConfigError",
    "CrashSpec",
    "DelayModel",
    "ExperimentConfig",
    "RunReport",
    "Verdict",
    "check_bounds",
    "check_gla",
    "check_la",
    "check_run",
    "comparability_oracle",
    "join",
    "join_all",
    "leq",
    "run_campaign",
    "run_experiment",
    "validate_config",
    "value",
]
