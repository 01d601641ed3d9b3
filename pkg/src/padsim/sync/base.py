"""Container driver base: state shared by every synchronization protocol.

A driver owns one container's :class:`~padsim.executor.StepCore`, its
replicated ownership tables, and the collective machinery every
protocol needs: end-of-step exchanges, migration rounds at evaluation
epochs, fail-stop membership changes.  Collectives are leaderless —
each container broadcasts its part and deterministically computes the
same outcome from the same inputs — and rely only on per-link FIFO
delivery, so they run unchanged over in-process channels and sockets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ControlMessage, MessageBlock, Router, SimulationError
from ..digest import DigestCollector
from ..executor import StepCore
from ..metrics import LpMetrics
from ..migration import MigrationRecord, reconcile_plan
from ..models.setup import ModelSetup
from ..replication import remove_dead_node
from ..scenario import ScenarioConfig


class FatalRunError(SimulationError):
    pass


class NetHandle:
    """A container's view of the transport mesh."""

    def __init__(self, mesh, lp: int):
        self.mesh = mesh
        self.lp = lp

    def send_block(self, dst: int, block: MessageBlock) -> None:
        self.mesh.send(self.lp, dst, "block", block)

    def send_ctrl(self, dst: int, op: str, data=None) -> None:
        self.mesh.send(self.lp, dst, "ctrl", ControlMessage(op, self.lp, dst, data))

    def poll(self) -> list:
        box = self.mesh.mailboxes[self.lp]
        items = []
        while box:
            items.append(box.popleft())
        return items


class LpDriver:
    """Base runtime for one logical-process container."""

    protocol = "?"

    def __init__(self, cfg: ScenarioConfig, setup: ModelSetup, lp: int,
                 net: NetHandle, min_delay: int = 1):
        self.cfg = cfg
        self.setup = setup
        self.lp = lp
        self.net = net
        self.horizon = setup.horizon
        self.router = Router(cfg.run.lps, cfg.lp_nodes())
        self.router.add_entities(setup.pids, setup.owners, setup.logical,
                                 setup.replica, setup.behavior_name)
        self.metrics = LpMetrics(lp, max(self.horizon, 1))
        keep_rows = cfg.ft.enabled or cfg.run.keep_entity_hashes
        self.digest = DigestCollector(self.horizon, keep_rows=keep_rows)
        mine = setup.pids[setup.owners == lp]
        self.core = StepCore(cfg, setup, self.router, lp, mine,
                             {lp: self.metrics}, self.digest, min_delay=min_delay)
        self.live_lps = set(range(cfg.run.lps))
        self.dead = False
        self.done = False
        self.fatal: Optional[str] = None
        self.snapshots: dict[int, np.ndarray] = {}
        self.migration_log: list[MigrationRecord] = []
        self._snap_steps = set(cfg.snapshot_steps())
        slow = cfg.slow_lp()
        self.slow_factor = slow[1] if slow and slow[0] == lp else 1.0
        self._crash_at = dict(cfg.crash_schedule()).get(self.node, None)
        # collective state
        self._props: dict[int, dict[int, list]] = {}
        self._eos2: dict[int, set] = {}
        self._next_clone_pid = self.router.n_entities

    # ------------------------------------------------------------------
    @property
    def node(self) -> int:
        return self.router.node_of_lp(self.lp)

    def peers(self) -> list[int]:
        return sorted(self.live_lps - {self.lp})

    def current_step(self) -> int:
        raise NotImplementedError

    def describe(self) -> str:
        state = "dead" if self.dead else ("done" if self.done else f"t={self.current_step()}")
        return f"lp{self.lp}[{self.protocol}]={state}"

    def mark_dead(self) -> None:
        self.dead = True

    def fail(self, msg: str) -> None:
        self.fatal = msg
        self.done = True

    def pump(self) -> bool:
        raise NotImplementedError

    # -- shared plumbing -------------------------------------------------
    def crash_due(self, step: int) -> bool:
        return self._crash_at is not None and step >= self._crash_at

    def broadcast_ctrl(self, op: str, data=None) -> None:
        for peer in self.peers():
            self.net.send_ctrl(peer, op, data)

    def flush_output(self, out, step: int) -> None:
        """Route one step's blocks and publish the shared rows."""
        for dst, blocks in sorted(out.blocks_by_dst.items()):
            for block in blocks:
                if dst == self.lp:
                    self.accept_block(block)
                else:
                    self.net.send_block(dst, block)
        if out.shared_rows is not None:
            self.core.ctx.put_shared(step + 1, self.lp, out.shared_rows)
            self.broadcast_ctrl("shared", (step + 1, out.shared_rows))

    def accept_shared(self, src: int, data) -> None:
        step, rows = data
        self.core.ctx.put_shared(step, src, rows)

    def accept_block(self, block: MessageBlock) -> None:
        raise NotImplementedError

    def apply_slowdown(self, step: int, measured_ms: float) -> None:
        """A slowed container burns proportional wall time each step."""
        if self.slow_factor > 1.0:
            extra_ms = max(measured_ms, 0.05) * (self.slow_factor - 1.0)
            t_end = time.perf_counter() + extra_ms / 1e3
            while time.perf_counter() < t_end:
                pass
            self.metrics.wall_ms[min(step, max(self.horizon - 1, 0))] += extra_ms

    # -- migration collectives ----------------------------------------------
    def is_migration_epoch(self, step: int) -> bool:
        return self.core.gaia.is_epoch(step) and len(self.live_lps) > 1

    def start_migration_round(self, step: int) -> None:
        moves = self.core.gaia.proposals(self.core.local_pids())
        self._props.setdefault(step, {})[self.lp] = moves
        self.broadcast_ctrl("props", (step, moves))

    def accept_props(self, src: int, data) -> None:
        step, moves = data
        self._props.setdefault(step, {})[src] = moves

    def props_complete(self, step: int) -> bool:
        return set(self._props.get(step, {})) >= self.live_lps

    def apply_migration_plan(self, step: int, pending_store: dict) -> None:
        """Reconcile everyone's proposals and execute my part of the plan."""
        proposals = [mv for _, moves in sorted(self._props.pop(step).items())
                     for mv in moves]
        plan = reconcile_plan(proposals, self.router.roster_sizes(), self.cfg.gaia,
                              self.core.gaia.round_idx, step, self.router.owner,
                              self.cfg.lp_nodes(), self.setup.groups)
        outbound: dict[int, list[int]] = {}
        for mv in plan.moves:
            if mv.src == self.lp:
                outbound.setdefault(mv.dst, []).append(mv.pid)
        for dst, pids in sorted(outbound.items()):
            t0 = time.perf_counter()
            blob = self.core.extract_entities(np.asarray(pids, dtype=np.int64))
            self.net.send_ctrl(dst, "xfer", (step, blob))
            wall = (time.perf_counter() - t0) * 1e3
            for pid in pids:
                self.migration_log.append(MigrationRecord(
                    step=step, pid=pid, src=self.lp, dst=dst,
                    nbytes=len(blob) // len(pids), wall_ms=wall / len(pids),
                    resume_step=step))
            s = min(step, max(self.horizon - 1, 0))
            self.metrics.migrations[s] += len(pids)
            self.metrics.total_migrations_out += len(pids)
        moved_away = {mv.pid for mv in plan.moves if mv.src == self.lp}
        if moved_away:
            self._forward_pending(moved_away, step, pending_store)
        for mv in plan.moves:
            self.router.move(mv.pid, mv.dst)
        self.core.gaia.commit_plan(plan)
        self._eos2.setdefault(step, set()).add(self.lp)
        self.broadcast_ctrl("eos2", (step,))

    def _forward_pending(self, moved: set, from_step: int, pending_store: dict) -> None:
        """Re-route queued future deliveries of entities that just left."""
        moved_arr = np.asarray(sorted(moved), dtype=np.int64)
        for ts in sorted(pending_store):
            if ts < from_step:
                continue
            kept = []
            for block in pending_store[ts]:
                if block.kind != 0:
                    kept.append(block)
                    continue
                hit = np.isin(block.dst_ids, moved_arr)
                if not np.any(hit):
                    kept.append(block)
                    continue
                for sel, take in ((np.nonzero(~hit)[0], False), (np.nonzero(hit)[0], True)):
                    if len(sel) == 0:
                        continue
                    part = MessageBlock(
                        kind=block.kind, src_lp=block.src_lp, dst_lp=block.dst_lp,
                        send_ts=block.send_ts, recv_ts=block.recv_ts,
                        seqs=block.seqs[sel], src_ids=block.src_ids[sel],
                        dst_ids=block.dst_ids[sel],
                        payloads=None if block.payloads is None
                        else [block.payloads[i] for i in sel.tolist()],
                        lsrc=None if block.lsrc is None else block.lsrc[sel],
                        lseq=None if block.lseq is None else block.lseq[sel],
                        src_replica=None if block.src_replica is None
                        else block.src_replica[sel])
                    if take:
                        for pid in np.unique(part.dst_ids).tolist():
                            dst_lp = int(self.router.owner[pid])
                            one = part if len(np.unique(part.dst_ids)) == 1 else None
                            if one is None:
                                rows = np.nonzero(part.dst_ids == pid)[0]
                                one = MessageBlock(
                                    kind=part.kind, src_lp=part.src_lp, dst_lp=dst_lp,
                                    send_ts=part.send_ts, recv_ts=part.recv_ts,
                                    seqs=part.seqs[rows], src_ids=part.src_ids[rows],
                                    dst_ids=part.dst_ids[rows],
                                    payloads=None if part.payloads is None
                                    else [part.payloads[i] for i in rows.tolist()])
                            self.net.send_ctrl(dst_lp, "fwd", one)
                    else:
                        kept.append(part)
            pending_store[ts] = kept

    def accept_xfer(self, src: int, data) -> None:
        step, blob = data
        self.core.install_entities(blob)

    def accept_eos2(self, src: int, data) -> None:
        step = data[0]
        self._eos2.setdefault(step, set()).add(src)

    def migration_confirmed(self, step: int) -> bool:
        return self._eos2.get(step, set()) >= self.live_lps

    def finish_migration_round(self, step: int) -> None:
        self._eos2.pop(step, None)

    # -- fail-stop membership -----------------------------------------------
    def on_peer_closed(self, peer: int) -> None:
        if peer not in self.live_lps:
            return
        dead_node = self.router.node_of_lp(peer)
        dead_lps = {lp for lp in self.live_lps
                    if self.router.node_of_lp(lp) == dead_node}
        self.live_lps -= dead_lps
        if not self.cfg.ft.enabled:
            self.fail(f"node {dead_node} (containers {sorted(dead_lps)}) failed; "
                      "the run aborts because fault tolerance is disabled")
            return
        dead_pids, fatal = remove_dead_node(self.setup.groups, self.router.owner,
                                            self.cfg.lp_nodes(), dead_node)
        if fatal:
            self.fail(f"node {dead_node} failure breaks replication quorum: "
                      + "; ".join(fatal))
            return
        self.router.drop_entities(dead_pids)
        self.on_membership_changed(dead_lps)

    def on_membership_changed(self, dead_lps: set) -> None:
        """Protocol hook: re-examine any collective waits."""
