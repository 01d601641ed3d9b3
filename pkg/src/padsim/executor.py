"""Shared step-execution machinery.

A :class:`StepCore` owns the entities of one execution context (one
container, or the whole model in the sequential reference executor) and
knows how to run one timestep: apply the step's sorted deliveries, run
every behavior, canonicalize the staged sends into message blocks, and
record digests, accounting and metrics.  Synchronization protocols
differ only in *when* they ask a core to execute a step and in how the
resulting blocks travel; everything observable here is bit-identical
across protocols by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (KIND_MODEL, Context, Delivery, EntityBlock, MessageBlock,
                   PendingSend, Router, SimulationError, UnknownEntityError)
from .digest import DigestCollector
from .metrics import LpMetrics
from .migration import GaiaEngine
from .models.setup import ModelSetup
from .replication import dedup_step_batch
from .rng import EntityStreams
from .scenario import ScenarioConfig

SNAPSHOT_DTYPE = np.dtype([("entity", "i8"), ("x", "f8"), ("y", "f8"), ("lp", "i8")])


@dataclass
class StepOutput:
    """What one container produced by executing one step."""

    blocks_by_dst: dict[int, list[MessageBlock]] = field(default_factory=dict)
    shared_rows: Optional[np.ndarray] = None


def _concat_payloads(parts: list) -> Optional[list]:
    if all(p is None for p, _ in parts):
        return None
    out = []
    for payloads, n in parts:
        out.extend(payloads if payloads is not None else [b""] * n)
    return out


def canonicalize_sends(staged: list[PendingSend], router: Router, step: int,
                       ft_on: bool, corrupt_src_lp: int = -1) \
        -> tuple[dict[int, dict[int, list[MessageBlock]]], dict[int, tuple[int, int]],
                 tuple[np.ndarray, np.ndarray]]:
    """Expand, classify, order and number one step's staged sends.

    Returns (blocks[src_lp][dst_lp], per-src-lp (local, remote) counts,
    sender-side accounting pairs).  The canonical per-container order —
    ascending (recv_ts, src, dst) over physical copies — assigns the
    sequence numbers receivers use to order simultaneous deliveries,
    and is reproduced identically by every execution mode.
    """
    empty = np.empty(0, dtype=np.int64)
    if not staged:
        return {}, {}, (empty, empty)
    src = np.concatenate([p.src for p in staged])
    dst_logical = np.concatenate([p.dst_logical for p in staged])
    delay = np.concatenate([p.delay for p in staged])
    payloads = _concat_payloads([(p.payloads, len(p.src)) for p in staged])

    # logical sequence numbers: identical for every replica of a sender
    lsrc = router.logical_of[src]
    recv_ts = step + delay
    lorder = np.lexsort((dst_logical, lsrc, recv_ts))
    lseq = np.empty(len(src), dtype=np.int64)
    lseq[lorder] = np.arange(len(src))

    if ft_on:
        rows, dst_phys = router.fanout(dst_logical)
    else:
        rows = np.arange(len(src))
        dst_phys = dst_logical
        bad = router.owner[dst_phys] < 0 if len(dst_phys) else np.zeros(0, bool)
        if np.any(bad):
            raise UnknownEntityError(
                f"send to unknown or dead entities {sorted(set(dst_phys[bad].tolist()))[:8]}")

    c_src = src[rows]
    c_dst = dst_phys
    c_recv = recv_ts[rows]
    c_srclp = router.owner[c_src]
    c_dstlp = router.owner[c_dst]

    local_remote: dict[int, tuple[int, int]] = {}
    out: dict[int, dict[int, list[MessageBlock]]] = {}
    recv_span = int(c_recv.max()) + 2 if len(c_recv) else 2
    for lp in np.unique(c_srclp).tolist():
        sel = np.nonzero(c_srclp == lp)[0]
        order = np.lexsort((c_dst[sel], c_src[sel], c_recv[sel]))
        sel = sel[order]
        seqs = np.arange(len(sel), dtype=np.int64)
        is_local = c_dstlp[sel] == lp
        local_remote[int(lp)] = (int(is_local.sum()), int(len(sel) - is_local.sum()))
        per_dst: dict[int, list[MessageBlock]] = {}
        keys = c_dstlp[sel] * recv_span + c_recv[sel]
        for key in np.unique(keys).tolist():
            pick = keys == key
            gsel = sel[pick]
            gseq = seqs[pick]
            dlp = int(c_dstlp[gsel[0]])
            if payloads is None:
                pl = None
            else:
                pl = [payloads[rows[g]] for g in gsel.tolist()]
            if lp == corrupt_src_lp:
                pl = [bytes(b ^ 0xFF for b in p) if p else b"\xff"
                      for p in (pl or [b""] * len(gsel))]
            block = MessageBlock(
                kind=KIND_MODEL, src_lp=int(lp), dst_lp=dlp,
                send_ts=step, recv_ts=int(c_recv[gsel[0]]),
                seqs=gseq, src_ids=c_src[gsel], dst_ids=c_dst[gsel], payloads=pl,
                lsrc=router.logical_of[c_src[gsel]] if ft_on else None,
                lseq=lseq[rows[gsel]] if ft_on else None,
                src_replica=router.replica_of[c_src[gsel]] if ft_on else None)
            per_dst.setdefault(dlp, []).append(block)
        for blist in per_dst.values():
            blist.sort(key=lambda b: b.recv_ts)
        out[int(lp)] = per_dst
    return out, local_remote, (c_src, c_dstlp)


class StepCore:
    """Entities plus per-step execution for one execution context.

    ``lp`` is the container id; the sequential executor passes -1 and
    hosts every entity, attributing per-container metrics through the
    ownership table.
    """

    def __init__(self, cfg: ScenarioConfig, setup: ModelSetup, router: Router,
                 lp: int, pids: np.ndarray, metrics_by_lp: dict[int, LpMetrics],
                 digest: DigestCollector, min_delay: int = 1):
        self.cfg = cfg
        self.setup = setup
        self.router = router
        self.lp = lp
        self.metrics_by_lp = metrics_by_lp
        self.own_metrics = metrics_by_lp.get(lp)
        self.digest = digest
        self.ft_on = cfg.ft.enabled
        self.audit = cfg.run.keep_entity_hashes
        self.quarantine: list = []
        self.ctx = Context(EntityStreams(cfg.run.seed), cfg, router,
                           cfg.run.seed, lp=lp, min_delay=min_delay)
        self.gaia = GaiaEngine(cfg.gaia, router.n_entities, cfg.run.lps,
                               lp if lp >= 0 else 0)
        self.blocks: dict[str, EntityBlock] = {}
        self.behavior_order: list[str] = sorted(setup.behaviors)
        corrupt = cfg.transport.corrupt_lp
        self.corrupt_src_lp = int(corrupt) if corrupt != "" else -1
        self.sent_uids: dict[int, set] = {}
        self.delivered_uids: dict[int, set] = {}
        self.horizon = max(setup.horizon, 1)
        self._install_initial(pids)

    # -- construction ---------------------------------------------------
    def _install_initial(self, pids: np.ndarray) -> None:
        setup = self.setup
        mine = np.isin(setup.pids, pids)
        for name in self.behavior_order:
            # bundled models register a single behavior for all entities
            behavior = setup.behaviors[name]
            block = EntityBlock(behavior)
            n = int(mine.sum())
            block.add(setup.pids[mine], setup.logical[mine], setup.replica[mine],
                      np.zeros(n, dtype=np.uint64),
                      np.zeros(n, dtype=behavior.state_dtype))
            self.blocks[name] = block

    def init_entities(self) -> Optional[np.ndarray]:
        self.ctx.step = 0
        for name in self.behavior_order:
            self.setup.behaviors[name].init_block(self.blocks[name], self.ctx)
        return self.shared_rows()

    def shared_rows(self) -> Optional[np.ndarray]:
        rows = []
        for name in self.behavior_order:
            behavior = self.setup.behaviors[name]
            if behavior.shared_dtype is not None:
                rows.append(behavior.shared_payload(self.blocks[name], self.ctx))
        if not rows:
            return None
        return rows[0] if len(rows) == 1 else np.concatenate(rows)

    def local_pids(self) -> np.ndarray:
        parts = [self.blocks[name].ids for name in self.behavior_order]
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)

    def _lpm(self, lp: int) -> LpMetrics:
        return self.metrics_by_lp[lp]

    # -- deliveries -------------------------------------------------------
    def assemble_delivery(self, step: int, blocks: list[MessageBlock]) \
            -> dict[str, tuple[Delivery, tuple[np.ndarray, np.ndarray]]]:
        """Merge, dedup and sort one step's inbound model blocks.

        Returns per behavior (delivery, receiver-side accounting rows)
        with deliveries in the canonical simultaneous-delivery order:
        ascending (sender container, sequence number), or the logical
        equivalent under replication.
        """
        model = [b for b in blocks if b.kind == KIND_MODEL and len(b)]
        if not model:
            return {}
        src_lp = np.concatenate([np.full(len(b), b.src_lp, dtype=np.int64) for b in model])
        seqs = np.concatenate([b.seqs for b in model])
        src_ids = np.concatenate([b.src_ids for b in model])
        dst_ids = np.concatenate([b.dst_ids for b in model])
        payloads = _concat_payloads([(b.payloads, len(b)) for b in model])
        if self.ft_on:
            lsrc = np.concatenate([b.lsrc for b in model])
            lseq = np.concatenate([b.lseq for b in model])
            rep = np.concatenate([b.src_replica for b in model])
            keep = dedup_step_batch(dst_ids, lsrc, lseq, rep, payloads,
                                    self.setup.groups, step, self.quarantine)
            order = keep[np.lexsort((lseq[keep], lsrc[keep]))]
        else:
            order = np.lexsort((seqs, src_lp))
        if self.lp >= 0:
            self.own_metrics.total_delivered += len(order)
        else:
            for lp, n in zip(*np.unique(self.router.owner[dst_ids[order]],
                                        return_counts=True)):
                self._lpm(int(lp)).total_delivered += int(n)
        if self.audit:
            self.delivered_uids[step] = {
                (int(src_lp[i]), int(seqs[i])) for i in order.tolist()}
        out: dict[str, tuple[Delivery, tuple[np.ndarray, np.ndarray]]] = {}
        for name in self.behavior_order:
            block = self.blocks[name]
            if len(block) == 0:
                continue
            here = order[np.isin(dst_ids[order], block.ids)]
            if len(here) == 0:
                continue
            slots = block.index_of(dst_ids[here])
            pl = None if payloads is None else [payloads[i] for i in here.tolist()]
            out[name] = (Delivery(slots, src_ids[here], pl),
                         (dst_ids[here], self.router.owner[src_ids[here]]))
        return out

    # -- one step ----------------------------------------------------------
    def exec_step(self, step: int, inbound: list[MessageBlock]) -> StepOutput:
        t0 = time.perf_counter()
        ctx = self.ctx
        ctx.step = step
        self.gaia.window.begin_step(step)
        for name, (delivery, acct) in self.assemble_delivery(step, inbound).items():
            self.gaia.window.add(step, acct[0], acct[1])
            self.setup.behaviors[name].deliver_block(self.blocks[name], delivery, ctx)
        for name in self.behavior_order:
            self.setup.behaviors[name].step_block(self.blocks[name], ctx)
        staged = ctx.take_staged()
        blocks, local_remote, sender_side = canonicalize_sends(
            staged, self.router, step, self.ft_on, self.corrupt_src_lp)
        self.gaia.window.add(step, sender_side[0], sender_side[1])
        out = StepOutput()
        s = min(step, self.horizon - 1)
        for src_lp, (lc, rm) in local_remote.items():
            lpm = self._lpm(src_lp)
            lpm.msgs_local[s] = lc
            lpm.msgs_remote[s] = rm
            lpm.total_sent += lc + rm
        for per_dst in blocks.values():
            for dst_lp, blist in per_dst.items():
                out.blocks_by_dst.setdefault(dst_lp, []).extend(blist)
        if self.audit:
            self.sent_uids[step] = {
                (b.src_lp, int(q)) for per in blocks.values()
                for bl in per.values() for b in bl for q in b.seqs.tolist()}
        if self.lp >= 0:
            self.own_metrics.roster[s] = len(self.local_pids())
        else:
            for lp, size in enumerate(self.router.roster_sizes().tolist()):
                self._lpm(lp).roster[s] = size
        self.digest.record(step, [self.blocks[n] for n in self.behavior_order])
        out.shared_rows = self.shared_rows()
        wall = (time.perf_counter() - t0) * 1e3
        if self.lp >= 0:
            self.own_metrics.wall_ms[s] += wall
        else:
            for lpm in self.metrics_by_lp.values():
                lpm.wall_ms[s] += wall
        return out

    # -- migration support ---------------------------------------------------
    def extract_entities(self, pids: np.ndarray) -> bytes:
        name = self.setup.behavior_name
        blob = self.blocks[name].serialize_rows(pids)
        self.blocks[name].remove(pids)
        return blob

    def install_entities(self, blob: bytes) -> np.ndarray:
        return self.blocks[self.setup.behavior_name].install_rows(blob)

    def drop_entities(self, pids: np.ndarray) -> None:
        for name in self.behavior_order:
            block = self.blocks[name]
            mine = pids[np.isin(pids, block.ids)]
            if len(mine):
                block.remove(mine)

    def snapshot_rows(self) -> Optional[np.ndarray]:
        """(entity, x, y, container) rows for hosted representative replicas."""
        rows = []
        for name in self.behavior_order:
            block = self.blocks[name]
            xy = self.setup.behaviors[name].snapshot_xy(block)
            if xy is None or len(block) == 0:
                continue
            take = block.replica == 0
            rec = np.empty(int(take.sum()), dtype=SNAPSHOT_DTYPE)
            rec["entity"] = block.logical[take]
            rec["x"] = xy[0][take]
            rec["y"] = xy[1][take]
            rec["lp"] = self.router.owner[block.ids[take]]
            rows.append(rec)
        if not rows:
            return None
        return np.concatenate(rows)
