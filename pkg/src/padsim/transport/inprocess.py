"""In-process transport and cooperative container scheduler.

Containers run as state machines on one thread, interleaved round-robin
by :class:`CoopScheduler`.  Channels are per-directed-pair FIFO queues;
injected latency delays delivery by wall clock but can never reorder a
pair's stream (each item's due time is clamped to its predecessors').
Fault injection closes all channels of a node, which surviving peers
observe as an end-of-stream mark after the last in-flight item — the
fail-stop model.
"""

from __future__ import annotations

import random
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from ..core import SimulationError


class TransportDown(SimulationError):
    pass


@dataclass
class Injections:
    """Runtime fault/latency plan; mutable via inject() while running."""

    latency: tuple[str, float, float] = ("none", 0.0, 0.0)
    slow: dict[int, float] = field(default_factory=dict)
    crash_at: dict[int, int] = field(default_factory=dict)   # node -> step
    log: list[str] = field(default_factory=list)

    def record(self, what: str) -> None:
        self.log.append(what)


class _Channel:
    __slots__ = ("items", "last_due", "closed")

    def __init__(self) -> None:
        self.items: deque = deque()          # (due, payload)
        self.last_due = 0.0
        self.closed = False

    def push(self, payload, due: float) -> None:
        due = max(due, self.last_due)        # latency never reorders the pair
        self.last_due = due
        self.items.append((due, payload))


class InProcessMesh:
    """Full mesh of ordered reliable channels between n containers."""

    def __init__(self, n_lps: int, lp_nodes: list[int], injections: Injections,
                 seed: int = 0):
        self.n_lps = n_lps
        self.lp_nodes = lp_nodes
        self.injections = injections
        self.channels = {(i, j): _Channel()
                         for i in range(n_lps) for j in range(n_lps) if i != j}
        self.mailboxes: list[deque] = [deque() for _ in range(n_lps)]
        self.dead_nodes: set[int] = set()
        self._lat_rng = random.Random(seed ^ 0x1A7E)

    # -- sending ---------------------------------------------------------
    def _latency_s(self) -> float:
        kind, a, b = self.injections.latency
        if kind == "none":
            return 0.0
        if kind == "fixed":
            return a / 1e3
        return self._lat_rng.uniform(a, b) / 1e3

    def send(self, src: int, dst: int, tag: str, payload) -> None:
        if self.lp_nodes[src] in self.dead_nodes:
            return                            # a dead container sends nothing
        if self.lp_nodes[dst] in self.dead_nodes:
            return                            # silently undeliverable after crash
        ch = self.channels[(src, dst)]
        if ch.closed:
            raise TransportDown(f"channel {src}->{dst} closed")
        ch.push((tag, payload), time.monotonic() + self._latency_s())

    # -- delivery ----------------------------------------------------------
    def pump(self) -> bool:
        """Move every due item into its destination mailbox."""
        now = time.monotonic()
        moved = False
        for (i, j), ch in self.channels.items():
            while ch.items and ch.items[0][0] <= now:
                self.mailboxes[j].append((i, ch.items.popleft()[1]))
                moved = True
        return moved

    def in_flight(self) -> int:
        return sum(len(ch.items) for ch in self.channels.values())

    def next_due(self) -> Optional[float]:
        dues = [ch.items[0][0] for ch in self.channels.values() if ch.items]
        return min(dues) if dues else None

    # -- faults --------------------------------------------------------------
    def close_node(self, node: int) -> None:
        if node in self.dead_nodes:
            return
        self.dead_nodes.add(node)
        dead_lps = [lp for lp in range(self.n_lps) if self.lp_nodes[lp] == node]
        for dead in dead_lps:
            for other in range(self.n_lps):
                if other == dead or self.lp_nodes[other] in self.dead_nodes:
                    continue
                # end-of-stream after whatever was already in flight
                ch = self.channels[(dead, other)]
                ch.push(("closed", dead), time.monotonic())
                ch.closed = True
        self.injections.record(f"node {node} fail-stop (containers {dead_lps})")


class CoopScheduler:
    """Round-robin driver loop for in-process runs.

    A container slowed by factor k gets one turn in every ceil(k)
    rounds, which is how a slow execution unit manifests to the others:
    barriers wait for it, optimists run ahead of it and roll back.
    """

    def __init__(self, mesh: InProcessMesh, drivers: list, injections: Injections):
        self.mesh = mesh
        self.drivers = drivers
        self.injections = injections

    def _check_crashes(self) -> None:
        for node, step in self.injections.crash_at.items():
            if node in self.mesh.dead_nodes:
                continue
            lps = [d for d in self.drivers if self.mesh.lp_nodes[d.lp] == node]
            if any(d.current_step() >= step for d in lps):
                for d in lps:
                    d.mark_dead()
                self.mesh.close_node(node)

    def run(self, deadline_s: float = 600.0) -> None:
        t0 = time.monotonic()
        rnd = 0
        while True:
            live = [d for d in self.drivers if not d.dead]
            if all(d.done for d in live):
                return
            if time.monotonic() - t0 > deadline_s:
                raise SimulationError("run exceeded deadline; container states: " +
                                      ", ".join(d.describe() for d in self.drivers))
            self._check_crashes()
            self.mesh.pump()
            progressed = False
            for d in self.drivers:
                if d.dead or d.done:
                    continue
                skip = int(self.injections.slow.get(d.lp, 1.0))
                if skip > 1 and rnd % skip:
                    continue
                progressed |= bool(d.pump())
            rnd += 1
            if not progressed:
                due = self.mesh.next_due()
                if due is not None:
                    time.sleep(max(0.0, min(due - time.monotonic(), 0.01)))
                elif self.mesh.in_flight() == 0 and not any(m for m in self.mesh.mailboxes):
                    self._check_crashes()
                    live = [d for d in self.drivers if not d.dead]
                    if all(d.done for d in live):
                        return
                    if not any(d.pump() for d in live if not d.done):
                        raise SimulationError(
                            "no container can make progress (deadlock): " +
                            ", ".join(d.describe() for d in self.drivers))
