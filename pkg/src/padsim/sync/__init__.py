"""Synchronization protocols: one interface, three families."""

from __future__ import annotations

from .base import LpDriver, NetHandle
from .time_stepped import TimeSteppedDriver
from .cmb import ConservativeDriver, cmb_next_safe, Blocked
from .time_warp import TimeWarpDriver

DRIVERS = {
    "time_stepped": TimeSteppedDriver,
    "cmb": ConservativeDriver,
    "time_warp": TimeWarpDriver,
}

__all__ = ["LpDriver", "NetHandle", "TimeSteppedDriver", "ConservativeDriver",
           "TimeWarpDriver", "cmb_next_safe", "Blocked", "DRIVERS"]
