"""Per-step run metrics and their CSV artifacts.

``metrics.csv`` holds the deterministic columns (message counts, the
derived local communication ratio, protocol overhead counters, applied
migrations, roster sizes); wall-clock timings go to ``timing.csv`` so
that metrics.csv is byte-identical across repeated runs of one
manifest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRICS_BASE_COLUMNS = ["step", "lcr_percent", "messages_local", "messages_remote",
                        "nulls", "rollbacks", "antimessages", "migrations"]


class LpMetrics:
    """One container's per-step counters.

    Model-derived columns (messages, roster) are overwritten when a
    step re-executes after a rollback; protocol overhead columns
    (nulls, rollbacks, antimessages) count work actually performed and
    only ever accumulate.
    """

    def __init__(self, lp: int, horizon: int):
        self.lp = lp
        self.horizon = horizon
        self.msgs_local = np.zeros(horizon, dtype=np.int64)
        self.msgs_remote = np.zeros(horizon, dtype=np.int64)
        self.nulls = np.zeros(horizon, dtype=np.int64)
        self.rollbacks = np.zeros(horizon, dtype=np.int64)
        self.antimessages = np.zeros(horizon, dtype=np.int64)
        self.migrations = np.zeros(horizon, dtype=np.int64)
        self.roster = np.zeros(horizon, dtype=np.int64)
        self.wall_ms = np.zeros(horizon, dtype=np.float64)
        # lifetime totals, kept independently of the per-step arrays so
        # the two can be reconciled at run end
        self.total_sent = 0
        self.total_delivered = 0
        self.total_cancelled = 0
        self.total_nulls = 0
        self.total_rollbacks = 0
        self.total_antimessages = 0
        self.total_migrations_out = 0
        self.gvt_rounds = 0
        self.checkpoints = 0

    def clip(self, step: int) -> int:
        return min(step, self.horizon - 1)


@dataclass
class RunMetrics:
    horizon: int
    per_lp: list[LpMetrics]
    migrations_log: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.sum([getattr(m, name) for m in self.per_lp], axis=0)

    def lcr_column(self) -> list[str]:
        local = self.column("msgs_local")
        remote = self.column("msgs_remote")
        out = []
        for t in range(self.horizon):
            tot = int(local[t] + remote[t])
            if tot == 0:
                out.append("")        # no traffic: ratio undefined, recorded absent
            else:
                out.append(f"{100.0 * local[t] / tot:.6f}")
        return out

    def mean_lcr(self, lo: int = 0, hi: int | None = None) -> float:
        local = self.column("msgs_local")[lo:hi]
        remote = self.column("msgs_remote")[lo:hi]
        vals = [100.0 * l / (l + r) for l, r in zip(local.tolist(), remote.tolist()) if l + r]
        return float(np.mean(vals)) if vals else float("nan")

    def reconcile(self) -> list[str]:
        """Cross-check per-step columns against the lifetime counters."""
        problems = []
        for name, total_name in (("nulls", "total_nulls"),
                                 ("rollbacks", "total_rollbacks"),
                                 ("antimessages", "total_antimessages")):
            col = int(self.column(name).sum())
            tot = sum(getattr(m, total_name) for m in self.per_lp)
            if col != tot:
                problems.append(f"{name}: per-step sum {col} != counter {tot}")
        col = int(self.column("migrations").sum())
        tot = sum(m.total_migrations_out for m in self.per_lp)
        if col != tot:
            problems.append(f"migrations: per-step sum {col} != counter {tot}")
        return problems


def write_metrics_csv(path: Path, metrics: RunMetrics) -> None:
    n_lps = len(metrics.per_lp)
    header = METRICS_BASE_COLUMNS + [f"roster_lp{i}" for i in range(n_lps)]
    lcr = metrics.lcr_column()
    cols = {name: metrics.column(name) for name in
            ("msgs_local", "msgs_remote", "nulls", "rollbacks", "antimessages", "migrations")}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t in range(metrics.horizon):
            row = [t, lcr[t], int(cols["msgs_local"][t]), int(cols["msgs_remote"][t]),
                   int(cols["nulls"][t]), int(cols["rollbacks"][t]),
                   int(cols["antimessages"][t]), int(cols["migrations"][t])]
            row += [int(m.roster[t]) for m in metrics.per_lp]
            w.writerow(row)


def write_timing_csv(path: Path, metrics: RunMetrics) -> None:
    n_lps = len(metrics.per_lp)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"wall_ms_lp{i}" for i in range(n_lps)])
        for t in range(metrics.horizon):
            w.writerow([t] + [f"{m.wall_ms[t]:.3f}" for m in metrics.per_lp])


def write_migrations_csv(path: Path, records: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "entity", "from_lp", "to_lp", "bytes", "wall_ms", "resume_step"])
        for r in records:
            w.writerow([r.step, r.pid, r.src, r.dst, r.nbytes, f"{r.wall_ms:.3f}", r.resume_step])


def read_metrics_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
