"""Turn a scenario into concrete behaviors and placed entities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Behavior
from ..replication import GroupTable, place_replicas
from ..scenario import ScenarioConfig, ScenarioError, parse_rosters
from .groups import GroupTrafficBehavior, parse_groups
from .idle import IdleBehavior
from .mobile_hosts import MobileHostBehavior, MobileHostParams, initial_allocation


@dataclass
class ModelSetup:
    """Everything an executor needs to instantiate a run."""

    behaviors: dict[str, Behavior]
    behavior_name: str
    logical_ids: np.ndarray
    base_owner: np.ndarray          # logical entity -> container, before replication
    pids: np.ndarray                # physical entities (replicas)
    owners: np.ndarray
    logical: np.ndarray
    replica: np.ndarray
    groups: GroupTable
    horizon: int
    lookahead: int
    n_logical: int


def _allocate(cfg: ScenarioConfig, ids: np.ndarray) -> np.ndarray:
    kind = cfg.model.allocation
    if kind == "explicit":
        rosters = parse_rosters(cfg.model.rosters, cfg.run.lps)
        owner = {}
        for lp, members in rosters.items():
            for e in members:
                owner[e] = lp
        missing = [int(e) for e in ids if int(e) not in owner]
        if missing:
            raise ScenarioError(f"model.rosters: no container for entities {missing[:8]}")
        return np.asarray([owner[int(e)] for e in ids], dtype=np.int64)
    return initial_allocation(kind, cfg.run.seed, ids, cfg.run.lps, cfg.model.side)


def build_model(cfg: ScenarioConfig) -> ModelSetup:
    name = cfg.model.name
    if name == "mobile_hosts":
        params = MobileHostParams(
            n_hosts=cfg.model.n_hosts, side=cfg.model.side, radius=cfg.model.radius,
            max_speed=cfg.model.max_speed, move_fraction=cfg.model.move_fraction,
            broadcast_fraction=cfg.model.broadcast_fraction, steps=cfg.model.steps)
        behavior: Behavior = MobileHostBehavior(params)
        ids = np.arange(params.n_hosts, dtype=np.int64)
        base_owner = _allocate(cfg, ids)
    elif name == "interaction_groups":
        behavior = GroupTrafficBehavior(parse_groups(cfg.model.groups))
        ids = np.asarray(behavior.member_ids(), dtype=np.int64)
        base_owner = _allocate(cfg, ids)
    elif name == "idle":
        behavior = IdleBehavior()
        ids = np.arange(cfg.run.lps * cfg.model.entities_per_lp, dtype=np.int64)
        base_owner = (ids % cfg.run.lps).astype(np.int64)
    else:
        raise ScenarioError(f"unknown model {name!r}")

    n_logical = len(ids)
    if cfg.ft.enabled:
        pids, owners, logical, replica, groups = place_replicas(
            ids, base_owner, cfg.ft.replicas, cfg.ft.mode,
            cfg.lp_nodes(), cfg.run.seed, n_logical)
    else:
        pids = ids.copy()
        owners = base_owner.copy()
        logical = ids.copy()
        replica = np.zeros(n_logical, dtype=np.int16)
        groups = GroupTable()

    return ModelSetup(
        behaviors={behavior.name: behavior},
        behavior_name=behavior.name,
        logical_ids=ids,
        base_owner=base_owner,
        pids=pids,
        owners=owners,
        logical=logical,
        replica=replica,
        groups=groups,
        horizon=cfg.model.steps,
        lookahead=max(behavior.lookahead, cfg.sync.lookahead),
        n_logical=n_logical,
    )
