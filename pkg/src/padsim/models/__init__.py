"""Bundled simulation models and their scenario builders."""

from __future__ import annotations

from .mobile_hosts import MobileHostBehavior, MobileHostParams, initial_allocation
from .groups import GroupTrafficBehavior, parse_groups
from .idle import IdleBehavior
from .setup import ModelSetup, build_model

__all__ = [
    "MobileHostBehavior", "MobileHostParams", "initial_allocation",
    "GroupTrafficBehavior", "parse_groups", "IdleBehavior",
    "ModelSetup", "build_model",
]
