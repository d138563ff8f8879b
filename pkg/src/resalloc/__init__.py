"""Simulation and learned resource allocation for business processes."""

from .model import ArrivalSpec, ParseError, ProcessModel, ValidationError, dump_model, load_model, validate
from .scenarios import UnknownScenario, builtin_scenario
from .sim import EpisodeStats, InfeasibleAssignment, Simulation, run_episode

__version__ = "0.1.0"

__all__ = [
    "ArrivalSpec",
    "EpisodeStats",
    "InfeasibleAssignment",
    "ParseError",
    "ProcessModel",
    "Simulation",
    "UnknownScenario",
    "ValidationError",
    "builtin_scenario",
    "dump_model",
    "load_model",
    "run_episode",
    "validate",
]
