"""Run result container shared by all executors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import RunMetrics
from .migration import MigrationRecord
from .scenario import ScenarioConfig


@dataclass
class RunResult:
    cfg: ScenarioConfig
    step_digest: np.ndarray
    metrics: RunMetrics
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    migration_log: list[MigrationRecord] = field(default_factory=list)
    quarantine: list = field(default_factory=list)
    fatal: Optional[str] = None
    wct_seconds: float = 0.0
    # audit extras (populated when run.keep_entity_hashes is on)
    delivered_uids: dict[int, set] = field(default_factory=dict)
    sent_uids: dict[int, set] = field(default_factory=dict)
    collectors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.fatal is None

    def totals(self) -> dict[str, int]:
        per = self.metrics.per_lp
        return {
            "sent": sum(m.total_sent for m in per),
            "delivered": sum(m.total_delivered for m in per),
            "nulls": sum(m.total_nulls for m in per),
            "rollbacks": sum(m.total_rollbacks for m in per),
            "antimessages": sum(m.total_antimessages for m in per),
            "migrations": sum(m.total_migrations_out for m in per),
        }
