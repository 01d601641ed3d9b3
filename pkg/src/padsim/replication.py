"""Replication-based fault tolerance.

A replicated entity is a group of R identical replicas hosted on
pairwise-distinct containers *and* pairwise-distinct execution nodes,
all running the same behavior with the same random stream.  Senders
address logical entities; every sender replica transmits to every
receiver replica, and receivers deduplicate (or, in byzantine mode,
vote on) the physical copies so model code observes each logical
message exactly once.

Crash mode tolerates f fail-stop node losses with R >= f+1; byzantine
mode masks corrupted payloads by majority vote and needs R >= 2f+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import SimulationError
from .rng import mix64

MODE_CRASH = "crash"
MODE_BYZANTINE = "byzantine"


class PlacementError(SimulationError):
    pass


class QuorumLossError(SimulationError):
    pass


@dataclass
class VseGroup:
    """One replicated entity: logical id plus its physical replica set."""

    logical: int
    mode: str
    degree: int                      # R as created
    members: list[int] = field(default_factory=list)   # physical ids, by replica index

    def live_members(self, owner: np.ndarray) -> list[int]:
        return [pid for pid in self.members if owner[pid] >= 0]


@dataclass
class GroupTable:
    """All replica groups of a run, plus the placement auditor."""

    mode: str = MODE_CRASH
    degree: int = 1
    groups: dict[int, VseGroup] = field(default_factory=dict)

    def group_of(self, logical: int) -> Optional[VseGroup]:
        return self.groups.get(logical)

    def audit_placement(self, owner: np.ndarray, lp_nodes: list[int]) -> list[str]:
        """Placement violations: two live replicas of one group sharing a
        container or a node.  Empty list means the invariant holds."""
        problems = []
        for g in self.groups.values():
            live = g.live_members(owner)
            lps = [int(owner[pid]) for pid in live]
            nodes = [lp_nodes[lp] for lp in lps]
            if len(set(lps)) != len(lps):
                problems.append(f"group {g.logical}: replicas share a container ({lps})")
            if len(set(nodes)) != len(nodes):
                problems.append(f"group {g.logical}: replicas share a node ({nodes})")
        return problems

    def quorum_ok(self, g: VseGroup, owner: np.ndarray) -> bool:
        live = len(g.live_members(owner))
        if self.mode == MODE_BYZANTINE:
            return live >= g.degree // 2 + 1
        return live >= 1


def lps_by_node(lp_nodes: list[int]) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for lp, node in enumerate(lp_nodes):
        out.setdefault(node, []).append(lp)
    return out


def place_replicas(logical_ids: np.ndarray, base_owner: np.ndarray, degree: int,
                   mode: str, lp_nodes: list[int], seed: int,
                   n_logical: int) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                            np.ndarray, GroupTable]:
    """Expand logical entities into placed replicas.

    Replica 0 keeps the model's own placement; further replicas walk the
    node list so no two land on the same node, picking a container on
    the target node by a seeded hash.  Physical id of replica r of
    logical v is ``v + r * n_logical`` (so replica 0 ids equal logical
    ids).

    Returns (pids, owners, logical, replica, groups).
    """
    nodes = lps_by_node(lp_nodes)
    node_list = sorted(nodes)
    if degree > len(node_list):
        raise PlacementError(
            f"{degree} replicas need {degree} distinct nodes, only {len(node_list)} available")
    table = GroupTable(mode=mode, degree=degree)
    pids, owners, logical, replica = [], [], [], []
    for v, lp0 in zip(np.asarray(logical_ids).tolist(), np.asarray(base_owner).tolist()):
        group = VseGroup(logical=v, mode=mode, degree=degree)
        n0 = node_list.index(lp_nodes[lp0])
        for r in range(degree):
            if r == 0:
                lp = lp0
            else:
                node = node_list[(n0 + r) % len(node_list)]
                cands = nodes[node]
                lp = cands[mix64(seed ^ (v * degree + r)) % len(cands)]
            pid = v + r * n_logical
            group.members.append(pid)
            pids.append(pid)
            owners.append(lp)
            logical.append(v)
            replica.append(r)
        table.groups[v] = group
    return (np.asarray(pids, dtype=np.int64), np.asarray(owners, dtype=np.int64),
            np.asarray(logical, dtype=np.int64), np.asarray(replica, dtype=np.int16),
            table)


@dataclass
class QuarantineIncident:
    step: int
    dst: int
    lsrc: int
    lseq: int
    tallies: dict[bytes, int]


def dedup_step_batch(dst_pids: np.ndarray, lsrc: np.ndarray, lseq: np.ndarray,
                     src_replica: np.ndarray, payloads: Optional[list],
                     groups: GroupTable, step: int,
                     incidents: Optional[list] = None) -> np.ndarray:
    """Select, per (receiver replica, logical message), one physical copy.

    Crash mode keeps the lowest sender replica present.  Byzantine mode
    requires one payload value to reach a strict majority of the sender
    group's degree; short of that the logical message is quarantined
    (dropped and logged).  Returns indices of the surviving rows sorted
    by (dst, lsrc, lseq).
    """
    n = len(dst_pids)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((src_replica, lseq, lsrc, dst_pids))
    d, s, q = dst_pids[order], lsrc[order], lseq[order]
    new_key = np.ones(n, dtype=bool)
    new_key[1:] = (d[1:] != d[:-1]) | (s[1:] != s[:-1]) | (q[1:] != q[:-1])
    starts = np.nonzero(new_key)[0]
    ends = np.append(starts[1:], n)
    if groups.mode != MODE_BYZANTINE:
        return order[starts]
    keep = []
    for a, b in zip(starts.tolist(), ends.tolist()):
        grp = groups.group_of(int(s[a]))
        degree = grp.degree if grp else 1
        tallies: dict[bytes, list[int]] = {}
        for k in range(a, b):
            row = int(order[k])
            payload = b"" if payloads is None else payloads[row]
            tallies.setdefault(bytes(payload), []).append(row)
        winner = None
        for payload, rows in tallies.items():
            if len(rows) > degree // 2:
                winner = rows[0]
                break
        if winner is None:
            if incidents is not None:
                incidents.append(QuarantineIncident(
                    step, int(d[a]), int(s[a]), int(q[a]),
                    {p: len(r) for p, r in tallies.items()}))
        else:
            keep.append(winner)
    return np.asarray(sorted(keep), dtype=np.int64)


def filter_migration_moves(moves: list[tuple[int, int, int, float]],
                           owner: np.ndarray, lp_nodes: list[int],
                           groups: GroupTable) -> list[tuple[int, int, int, float]]:
    """Drop moves that would co-locate two replicas of one group on one
    container or node.  Moves are considered in order, against the
    ownership state the accepted prefix produces."""
    if not groups.groups:
        return list(moves)
    work = owner.copy()
    logical_of: dict[int, VseGroup] = {}
    for g in groups.groups.values():
        for pid in g.members:
            logical_of[pid] = g
    out = []
    for pid, src, dst, score in moves:
        g = logical_of.get(pid)
        if g is not None:
            clash = False
            for other in g.members:
                if other == pid or work[other] < 0:
                    continue
                if int(work[other]) == dst or lp_nodes[int(work[other])] == lp_nodes[dst]:
                    clash = True
                    break
            if clash:
                continue
        out.append((pid, src, dst, score))
        work[pid] = dst
    return out


def remove_dead_node(groups: GroupTable, owner: np.ndarray, lp_nodes: list[int],
                     dead_node: int) -> tuple[list[int], list[str]]:
    """Drop all replicas hosted on a dead node from their groups.

    Returns (dead pids, fatal diagnostics).  A non-empty diagnostics
    list means some group fell below quorum and the run cannot continue.
    """
    dead_pids = []
    fatal = []
    for g in groups.groups.values():
        for pid in list(g.members):
            lp = int(owner[pid])
            if lp >= 0 and lp_nodes[lp] == dead_node:
                dead_pids.append(pid)
    for g in groups.groups.values():
        survivors = [pid for pid in g.members
                     if int(owner[pid]) >= 0 and lp_nodes[int(owner[pid])] != dead_node]
        if groups.mode == MODE_BYZANTINE:
            if len(survivors) < g.degree // 2 + 1:
                fatal.append(f"group {g.logical}: {len(survivors)} survivors cannot vote "
                             f"(degree {g.degree})")
        elif not survivors:
            fatal.append(f"group {g.logical}: no surviving replica")
    return dead_pids, fatal
