"""Slotted simulator of the load-balanced router."""
from .core import (
    QUANTITIES,
    InadmissibleTraffic,
    SimState,
    SimulationFault,
    TailStats,
    advance_to,
    empirical_tail,
    new_state,
    run,
    step,
    trace_events,
)

__all__ = [
    "QUANTITIES",
    "InadmissibleTraffic",
    "SimState",
    "SimulationFault",
    "TailStats",
    "advance_to",
    "empirical_tail",
    "new_state",
    "run",
    "step",
    "trace_events",
]
