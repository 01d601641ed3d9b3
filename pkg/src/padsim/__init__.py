"""padsim: parallel and distributed discrete-event simulation.

Entities live inside logical-process containers, synchronized by a
pluggable protocol (time-stepped barrier, conservative with bound
messages, or optimistic with rollback), with an adaptive layer that
migrates communicating entities together and an optional replication
layer for fault tolerance.
"""

from __future__ import annotations

from .core import (Behavior, BehaviorRegistry, CallbackBehavior, EntityBlock,
                   EntityView, MessageBlock, SimMessage, SimulationError,
                   ProtocolConstraintError, RegistrationError, Router,
                   UnknownEntityError)
from .digest import compare_folds, DigestComparison
from .scenario import ScenarioConfig, ScenarioError, load_scenario, scenario_from_mapping
from .sequential import sequential_run

__version__ = "0.1.0"

__all__ = [
    "Behavior", "BehaviorRegistry", "CallbackBehavior", "EntityBlock",
    "EntityView", "MessageBlock", "SimMessage", "SimulationError",
    "ProtocolConstraintError", "RegistrationError", "Router", "UnknownEntityError",
    "ScenarioConfig", "ScenarioError", "load_scenario", "scenario_from_mapping",
    "sequential_run", "compare_folds", "DigestComparison", "__version__",
]
