"""Radial feeder model: network data, branch-flow programs and regulation outcomes."""

from .builders import (
    Injections,
    build_decision_problem,
    build_evaluation_problem,
    build_multiobjective_problem,
    decision_template,
    evaluation_template,
)
from .network import SCENARIOS, DeviceSet, Network, NetworkError, case33, get_scenario, load_network
from .outcome import OutcomeError, RegulationOutcome, extract_outcome, regret, violation_rate

__all__ = [
    "Injections", "build_decision_problem", "build_evaluation_problem", "build_multiobjective_problem",
    "decision_template", "evaluation_template",
    "SCENARIOS", "DeviceSet", "Network", "NetworkError", "case33", "get_scenario", "load_network",
    "OutcomeError", "RegulationOutcome", "extract_outcome", "regret", "violation_rate",
]
