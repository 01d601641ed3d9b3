"""Interaction-group micro model.

A handful of entities partitioned into fixed groups; every step each
entity sends one empty message to every other member of its own group
and counts what it receives.  All traffic is intra-group, so a
placement that co-locates each group reaches a local ratio of 100 — the
canonical convergence workload for the clustering heuristic.
"""

from __future__ import annotations

import numpy as np

from ..core import Behavior, Context, Delivery, EntityBlock

GROUP_STATE_DTYPE = np.dtype([("gid", "i8"), ("rx", "u8")])


def parse_groups(text: str) -> list[list[int]]:
    """Parse "1,3,7,10;2,5,6;4,8,9" into id groups."""
    groups = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            groups.append([int(tok) for tok in part.split(",")])
    flat = [e for g in groups for e in g]
    if len(set(flat)) != len(flat):
        raise ValueError("an entity appears in more than one group")
    return groups


class GroupTrafficBehavior(Behavior):
    name = "group-traffic"
    state_dtype = GROUP_STATE_DTYPE
    lookahead = 1

    def __init__(self, groups: list[list[int]]):
        self.groups = [sorted(g) for g in groups]
        self.peers: dict[int, list[int]] = {}
        self.gid_of: dict[int, int] = {}
        for gid, members in enumerate(self.groups):
            for e in members:
                self.peers[e] = [m for m in members if m != e]
                self.gid_of[e] = gid

    def member_ids(self) -> list[int]:
        return sorted(self.gid_of)

    def init_block(self, block: EntityBlock, ctx: Context) -> None:
        for i, log in enumerate(block.logical.tolist()):
            block.states["gid"][i] = self.gid_of[log]

    def deliver_block(self, block: EntityBlock, delivery: Delivery, ctx: Context) -> None:
        np.add.at(block.states["rx"], delivery.slots, 1)

    def step_block(self, block: EntityBlock, ctx: Context) -> None:
        src, dst = [], []
        for i, log in enumerate(block.logical.tolist()):
            for peer in self.peers[log]:
                src.append(int(block.ids[i]))
                dst.append(peer)
        if src:
            ctx.send_block(np.asarray(src, dtype=np.int64),
                           np.asarray(dst, dtype=np.int64), delay=1)
