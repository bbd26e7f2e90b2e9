"""Overdamped particle engine: stepping, aggregation, bridge detection and conductance."""

from .graph import ContactGraph, bridging_status, conductance
from .simulate import (Event, NumericalBlowupError, RunResult, Simulation, Snapshot, merge_and_attach,
                       run_simulation, step)
from .state import ParticleState, PlacementError, init_state

__all__ = [
    "ContactGraph", "Event", "NumericalBlowupError", "ParticleState", "PlacementError", "RunResult",
    "Simulation", "Snapshot", "bridging_status", "conductance", "init_state", "merge_and_attach",
    "run_simulation", "step",
]
