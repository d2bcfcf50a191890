"""Agent-based ride-sourcing simulation with logit ride-acceptance decisions."""

from .choice import (
    Behavioural,
    ChoiceModel,
    Decision,
    DecisionContext,
    Random,
    acceptance_probability,
    build_context,
    calibrate_random_probability,
    decide,
    sensitivity_sweep,
    systematic_utility,
)
from .engine import DriverAgent, SimOutput, TripRequest, run
from .metrics import KpiSummary, gini, summarize, trend_stats
from .netgraph import RoadGraph, Route, classify_speeds, generate_grid, load_graph, shortest_route
from .scenario import ExperimentPlan, ScenarioConfig, run_sweep

__version__ = "0.1.0"
