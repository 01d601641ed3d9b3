"""Sequential reference executor.

Runs the whole model on one execution context, processing every event
in non-decreasing timestamp order with the engine's fixed tie-break.
It uses none of the synchronization machinery (no queues, barriers,
bound messages, checkpoints), which makes it the independent oracle the
parallel protocols are checked against: for one scenario every
protocol's trajectory digest must equal this executor's exactly.

The adaptivity layer is driven here exactly as the containers drive it
in a distributed run (per-container proposals from per-container
windows, identical reconciliation), so ownership histories and
communication metrics also match bit for bit.
"""

from __future__ import annotations

import time

import numpy as np

from .digest import DigestCollector, merge_logical_digest
from .executor import StepCore
from .metrics import LpMetrics, RunMetrics
from .migration import MigrationRecord, local_proposals, reconcile_plan
from .models.setup import ModelSetup, build_model
from .core import Router
from .results import RunResult
from .scenario import ScenarioConfig


def sequential_run(cfg: ScenarioConfig, setup: ModelSetup | None = None) -> RunResult:
    t_start = time.perf_counter()
    setup = setup or build_model(cfg)
    horizon = setup.horizon
    n_lps = cfg.run.lps
    router = Router(n_lps, cfg.lp_nodes())
    router.add_entities(setup.pids, setup.owners, setup.logical, setup.replica,
                        setup.behavior_name)
    metrics_by_lp = {lp: LpMetrics(lp, max(horizon, 1)) for lp in range(n_lps)}
    keep_rows = cfg.ft.enabled or cfg.run.keep_entity_hashes
    digest = DigestCollector(horizon, keep_rows=keep_rows)
    core = StepCore(cfg, setup, router, lp=-1, pids=setup.pids,
                    metrics_by_lp=metrics_by_lp, digest=digest)
    shared = core.init_entities()
    if shared is not None:
        core.ctx.put_shared(0, 0, shared)

    pending: dict[int, list] = {}
    snapshots: dict[int, np.ndarray] = {}
    migration_log: list[MigrationRecord] = []
    snap_steps = set(cfg.snapshot_steps())
    row_bytes = 26 + setup.behaviors[setup.behavior_name].state_dtype.itemsize

    for t in range(horizon):
        if core.gaia.is_epoch(t):
            proposals = []
            for lp in range(n_lps):
                pids_lp = np.nonzero(router.owner == lp)[0]
                proposals.extend(local_proposals(
                    core.gaia.window, pids_lp, lp, cfg.gaia,
                    core.gaia.last_plan_round, core.gaia.round_idx))
            plan = reconcile_plan(proposals, router.roster_sizes(), cfg.gaia,
                                  core.gaia.round_idx, t, router.owner,
                                  cfg.lp_nodes(), setup.groups)
            for mv in plan.moves:
                router.move(mv.pid, mv.dst)
                metrics_by_lp[mv.src].migrations[min(t, horizon - 1)] += 1
                metrics_by_lp[mv.src].total_migrations_out += 1
                migration_log.append(MigrationRecord(
                    step=t, pid=mv.pid, src=mv.src, dst=mv.dst,
                    nbytes=row_bytes, wall_ms=0.0, resume_step=t))
            core.gaia.commit_plan(plan)
        if t in snap_steps:
            rows = core.snapshot_rows()
            if rows is not None:
                snapshots[t] = rows
        out = core.exec_step(t, pending.pop(t, []))
        for blocks in out.blocks_by_dst.values():
            for block in blocks:
                pending.setdefault(block.recv_ts, []).append(block)
        if out.shared_rows is not None:
            core.ctx.put_shared(t + 1, 0, out.shared_rows)
            core.ctx.prune_shared(t + 1)

    fold = digest.step_fold
    if keep_rows:
        fold = merge_logical_digest([digest], horizon)
    return RunResult(
        cfg=cfg,
        step_digest=fold,
        metrics=RunMetrics(max(horizon, 1), [metrics_by_lp[lp] for lp in range(n_lps)],
                           migration_log),
        snapshots=snapshots,
        migration_log=migration_log,
        quarantine=core.quarantine,
        wct_seconds=time.perf_counter() - t_start,
        delivered_uids=core.delivered_uids,
        sent_uids=core.sent_uids,
        collectors=[digest],
    )
