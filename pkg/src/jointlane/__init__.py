"""Mesoscopic two-lane corridor simulation with bus-priority lane coordination."""

from .control import ControlParams, strategy_step
from .engine import EngineClock, World, execute_lane_change, inject_demand, step
from .network import Edge, Lane, NetworkModel, SegmentRef, VehicleClass
from .prediction import BprParams, PredictionSnapshot, ProtectionHorizon, bpr_time
from .runner import RunResult, simulate, write_run_reports
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"

__all__ = [
    "BprParams",
    "ControlParams",
    "Edge",
    "EngineClock",
    "Lane",
    "NetworkModel",
    "PredictionSnapshot",
    "ProtectionHorizon",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "SegmentRef",
    "VehicleClass",
    "World",
    "bpr_time",
    "execute_lane_change",
    "inject_demand",
    "load_scenario",
    "simulate",
    "step",
    "strategy_step",
    "write_run_reports",
]
