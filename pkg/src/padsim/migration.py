"""Communication accounting and adaptive entity migration.

Each container keeps, per hosted entity, a sliding window of message
counts partitioned by the peer entity's container at the time of the
message (the entity's own container column is its local count).  Every
evaluation period each container derives migration proposals for its
own entities from this purely local information; proposals are then
reconciled identically everywhere into one deterministic plan.

Proposal rule: an entity whose window shows at least ``min_activity``
messages, with at least ``threshold`` of them remote, is proposed for
the container holding the plurality of its traffic, provided that
plurality strictly beats its current local count.  The plan keeps every
roster within ``±balance_band`` of the mean roster size (lowest-score
proposals dropped first) and an entity that migrated in the last
``hysteresis`` evaluations is ineligible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .replication import GroupTable
from .scenario import GaiaCfg


@dataclass(frozen=True)
class Move:
    pid: int
    src: int
    dst: int
    score: float


@dataclass
class MigrationPlan:
    round_idx: int
    step: int
    moves: list[Move] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.moves)


@dataclass
class MigrationRecord:
    """Cost log entry for one executed transfer."""

    step: int
    pid: int
    src: int
    dst: int
    nbytes: int
    wall_ms: float
    resume_step: int


class CommWindow:
    """Per-entity, per-peer-container sliding message counts (W steps).

    Rows are indexed by physical entity id; a container only ever
    touches rows of entities it hosts or talks to locally.  Slots are
    zeroed when a step (re)starts, so re-execution after a rollback
    overwrites rather than double-counts.
    """

    def __init__(self, n_entities: int, n_lps: int, window: int):
        self.window = window
        self.n_lps = n_lps
        self.ring = np.zeros((window, n_entities, n_lps), dtype=np.uint32)
        self._slot_step = np.full(window, -1, dtype=np.int64)

    def grow(self, n_entities: int) -> None:
        if n_entities > self.ring.shape[1]:
            extra = np.zeros((self.window, n_entities - self.ring.shape[1], self.n_lps),
                             dtype=np.uint32)
            self.ring = np.concatenate([self.ring, extra], axis=1)

    def begin_step(self, step: int) -> None:
        slot = step % self.window
        if self._slot_step[slot] != step:
            self.ring[slot] = 0
            self._slot_step[slot] = step
        else:
            self.ring[slot] = 0

    def add(self, step: int, entity_ids: np.ndarray, peer_lps: np.ndarray) -> None:
        if len(entity_ids):
            np.add.at(self.ring[step % self.window], (entity_ids, peer_lps), 1)

    def totals_for(self, ids: np.ndarray) -> np.ndarray:
        """(len(ids), n_lps) window sums."""
        return self.ring[:, ids, :].sum(axis=0, dtype=np.int64)

    def reset_rows(self, ids: np.ndarray) -> None:
        self.ring[:, ids, :] = 0


def local_proposals(window: CommWindow, local_pids: np.ndarray, own_lp: int,
                    params: GaiaCfg, last_plan_round: dict[int, int],
                    round_idx: int) -> list[Move]:
    """Migration proposals for one container's own entities."""
    if len(local_pids) == 0:
        return []
    counts = window.totals_for(local_pids)
    totals = counts.sum(axis=1)
    own = counts[:, own_lp]
    dst = np.argmax(counts, axis=1)           # ties resolve to the lowest container id
    best = counts[np.arange(len(local_pids)), dst]
    with np.errstate(invalid="ignore", divide="ignore"):
        ext = np.where(totals > 0, (totals - own) / np.maximum(totals, 1), 0.0)
    eligible = (totals >= params.min_activity) & (ext >= params.threshold) \
        & (dst != own_lp) & (best > own)
    moves = []
    for k in np.nonzero(eligible)[0].tolist():
        pid = int(local_pids[k])
        last = last_plan_round.get(pid)
        if last is not None and round_idx - last < params.hysteresis:
            continue
        moves.append(Move(pid, own_lp, int(dst[k]), float(best[k] / totals[k])))
    return moves


def reconcile_plan(proposals: list[Move], roster_sizes: np.ndarray, params: GaiaCfg,
                   round_idx: int, step: int, owner: np.ndarray,
                   lp_nodes: list[int], groups: GroupTable) -> MigrationPlan:
    """Deterministic global plan from everyone's proposals.

    Every container runs this over the identical proposal multiset and
    obtains the identical plan.  Proposals are taken best-score first;
    one is kept only if the rosters it leaves stay inside the balance
    band and (under replication) it does not co-locate two replicas of
    one group on a container or node.
    """
    order = sorted(proposals, key=lambda m: (-m.score, m.pid))
    roster = roster_sizes.astype(np.int64).copy()
    mean = roster.sum() / max(len(roster), 1)
    hi = (1.0 + params.balance_band) * mean
    lo = (1.0 - params.balance_band) * mean
    work_owner = owner.copy()
    replica_peers: dict[int, list[int]] = {}
    for g in groups.groups.values():
        for pid in g.members:
            replica_peers[pid] = [m for m in g.members if m != pid]
    accepted: list[Move] = []
    for mv in order:
        if roster[mv.dst] + 1 > hi or roster[mv.src] - 1 < lo:
            continue
        clash = False
        for peer in replica_peers.get(mv.pid, ()):
            peer_lp = int(work_owner[peer])
            if peer_lp < 0:
                continue
            if peer_lp == mv.dst or lp_nodes[peer_lp] == lp_nodes[mv.dst]:
                clash = True
                break
        if clash:
            continue
        accepted.append(mv)
        roster[mv.dst] += 1
        roster[mv.src] -= 1
        work_owner[mv.pid] = mv.dst
    accepted.sort(key=lambda m: m.pid)
    return MigrationPlan(round_idx=round_idx, step=step, moves=accepted)


class GaiaEngine:
    """Per-container adaptivity state: window, hysteresis, plan history."""

    def __init__(self, cfg: GaiaCfg, n_entities: int, n_lps: int, own_lp: int):
        self.cfg = cfg
        self.own_lp = own_lp
        self.window = CommWindow(n_entities, n_lps, cfg.window)
        self.last_plan_round: dict[int, int] = {}
        self.round_idx = 0

    def is_epoch(self, step: int) -> bool:
        """Evaluation happens at the boundary entering ``step``."""
        return self.cfg.enabled and step > 0 and step % self.cfg.eval_every == 0

    def proposals(self, local_pids: np.ndarray) -> list[Move]:
        return local_proposals(self.window, local_pids, self.own_lp, self.cfg,
                               self.last_plan_round, self.round_idx)

    def commit_plan(self, plan: MigrationPlan) -> None:
        for mv in plan.moves:
            self.last_plan_round[mv.pid] = plan.round_idx
            self.window.reset_rows(np.asarray([mv.pid]))
        self.round_idx += 1
