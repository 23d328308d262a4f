"""Multi-issue cloud resource marketplace with BDI negotiating agents,
self-competition detection and coordinated bidding."""

from .model import (
    Accept,
    IssueSpec,
    Offer,
    Side,
    Stance,
    Terminate,
    classify_stance,
    cooperation_threshold,
    cost_delta,
    utility,
    validate_weights,
)
from .scenario import Scenario, load_scenario
from .simulation import Simulation, compare_coordination, emit, run

__all__ = [
    "Accept",
    "IssueSpec",
    "Offer",
    "Scenario",
    "Side",
    "Simulation",
    "Stance",
    "Terminate",
    "classify_stance",
    "compare_coordination",
    "cooperation_threshold",
    "cost_delta",
    "emit",
    "load_scenario",
    "run",
    "utility",
    "validate_weights",
]

__version__ = "0.1.0"
