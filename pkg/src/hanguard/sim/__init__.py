"""Deterministic discrete-event simulation of a Hanguard-protected home network."""

from .engine import EventKind, LinkModel, SimEvent, Simulator
from .metrics import MetricsReport, read_metrics_csv
from .scenarios import (
    BUILTIN,
    KINDS,
    Scenario,
    builtin,
    detection_oracle,
    parse_scenarios,
    run_scenario,
    validate_scenario,
)
from .topology import ScenarioError, Topology
from .world import SimParams, World, measure_decision_latency

__all__ = [
    "BUILTIN",
    "EventKind",
    "KINDS",
    "LinkModel",
    "MetricsReport",
    "Scenario",
    "ScenarioError",
    "SimEvent",
    "SimParams",
    "Simulator",
    "Topology",
    "World",
    "builtin",
    "detection_oracle",
    "measure_decision_latency",
    "parse_scenarios",
    "read_metrics_csv",
    "run_scenario",
    "validate_scenario",
]
