"""Simulated robot swarm organised as a self-organizing nervous system, with LLM-generated mission code."""

from .harness import EndpointLlm, MockLlm, TrialMetrics, emit_plot_data, run_batch, run_trial
from .model import MissionProgram, PlanarVelocity, Pose2D, RobotKind, RobotSpec, Scenario
from .scenario import load_scenario, parse_scenario

__all__ = [
    "EndpointLlm",
    "MissionProgram",
    "MockLlm",
    "PlanarVelocity",
    "Pose2D",
    "RobotKind",
    "RobotSpec",
    "Scenario",
    "TrialMetrics",
    "emit_plot_data",
    "load_scenario",
    "parse_scenario",
    "run_batch",
    "run_trial",
]
