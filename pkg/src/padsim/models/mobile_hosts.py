"""Wireless ad-hoc mobile host workload.

Hosts roam a square torus under the random waypoint mobility model.  At
every timestep a seeded global draw selects a fraction of hosts that
broadcast a ping to every host within the transmission radius; pings
are delivered at the next step and counted.  Communication is therefore
strongly spatially local, which is what the adaptive clustering layer
exploits.

Neighborhoods are evaluated against the globally consistent position
table published at the previous step boundary (i.e. the positions with
which hosts enter the step).  Remote positions of the current instant
are unknowable under a one-step send horizon, and using the entry
snapshot keeps the neighbor relation symmetric and identical across
execution modes.

Per-entity stream draw order (frozen): init consumes 5 draws
(x, y, waypoint x, waypoint y, speed); each step consumes 1 gate draw,
plus 3 more (new waypoint and speed) when the host reaches its
waypoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Behavior, Context, Delivery, EntityBlock
from ..grid import SpatialGrid, wrap_delta
from ..rng import TAG_ENTITY, allocation_uniform, draw_u64, stream_base, u64_to_unit

PURPOSE_BROADCAST = 0xB0ADCA57

MH_STATE_DTYPE = np.dtype([
    ("x", "f8"), ("y", "f8"),
    ("wx", "f8"), ("wy", "f8"),
    ("speed", "f8"),
    ("pings", "u8"),
])

MH_SHARED_DTYPE = np.dtype([("id", "i8"), ("x", "f8"), ("y", "f8")])


@dataclass
class MobileHostParams:
    n_hosts: int = 9999
    side: float = 10000.0
    radius: float = 250.0
    max_speed: float = 10.0
    move_fraction: float = 0.70
    broadcast_fraction: float = 0.20
    steps: int = 1000

    def validate(self) -> None:
        if self.n_hosts < 0 or self.steps < 0:
            raise ValueError("n_hosts and steps must be non-negative")
        if self.side <= 0 or self.max_speed <= 0:
            raise ValueError("side and max_speed must be positive")
        if self.radius < 0 or self.radius >= self.side / 2:
            raise ValueError("radius must satisfy 0 <= radius < side/2")
        if not (0 <= self.move_fraction <= 1 and 0 <= self.broadcast_fraction <= 1):
            raise ValueError("fractions must lie in [0, 1]")


def waypoint_step(states: np.ndarray, gate: np.ndarray, side: float,
                  move_fraction: float) -> np.ndarray:
    """Advance one random-waypoint step for all rows, in place.

    ``gate`` is the per-row uniform deciding whether the row moves.
    Returns the mask of rows that reached their waypoint and need a
    fresh waypoint and speed drawn by the caller.
    """
    movers = gate < move_fraction
    dx = wrap_delta(states["x"], states["wx"], side)
    dy = wrap_delta(states["y"], states["wy"], side)
    dist = np.sqrt(dx * dx + dy * dy)
    arrive = movers & (dist <= states["speed"])
    cruise = movers & ~arrive
    if np.any(cruise):
        scale = states["speed"][cruise] / dist[cruise]
        states["x"][cruise] = (states["x"][cruise] + dx[cruise] * scale) % side
        states["y"][cruise] = (states["y"][cruise] + dy[cruise] * scale) % side
    if np.any(arrive):
        states["x"][arrive] = states["wx"][arrive]
        states["y"][arrive] = states["wy"][arrive]
    return arrive


def assign_waypoints(states: np.ndarray, mask: np.ndarray, u_wx, u_wy, u_speed,
                     side: float, max_speed: float) -> None:
    states["wx"][mask] = u_wx * side
    states["wy"][mask] = u_wy * side
    # speed uniform in (0, max]: 1-u maps [0,1) onto (0,1]
    states["speed"][mask] = (1.0 - u_speed) * max_speed


def random_waypoint_step(state: np.void, rng_draws, side: float, max_speed: float,
                         move_fraction: float = 0.70) -> np.void:
    """Single-host reference form of the mobility update.

    ``rng_draws`` yields uniforms in draw order (gate, then waypoint x,
    waypoint y, speed when the waypoint is reached).  Runs the same
    kernel as the vectorised path on a one-row view.
    """
    row = np.asarray([state], dtype=MH_STATE_DTYPE)
    gate = np.asarray([next(rng_draws)], dtype=np.float64)
    arrive = waypoint_step(row, gate, side, move_fraction)
    if arrive[0]:
        assign_waypoints(row, arrive, next(rng_draws), next(rng_draws),
                         next(rng_draws), side, max_speed)
    return row[0]


class MobileHostBehavior(Behavior):
    name = "mobile-host"
    state_dtype = MH_STATE_DTYPE
    shared_dtype = MH_SHARED_DTYPE
    lookahead = 1

    def __init__(self, params: MobileHostParams):
        params.validate()
        self.params = params

    def init_block(self, block: EntityBlock, ctx: Context) -> None:
        p = self.params
        block.states["x"] = ctx.draws(block) * p.side
        block.states["y"] = ctx.draws(block) * p.side
        all_rows = np.ones(len(block), dtype=bool)
        assign_waypoints(block.states, all_rows, ctx.draws(block), ctx.draws(block),
                         ctx.draws(block), p.side, p.max_speed)

    def deliver_block(self, block: EntityBlock, delivery: Delivery, ctx: Context) -> None:
        np.add.at(block.states["pings"], delivery.slots, 1)

    def step_block(self, block: EntityBlock, ctx: Context) -> None:
        p = self.params
        if len(block) and p.radius > 0:
            u = ctx.global_uniform(PURPOSE_BROADCAST, block.logical)
            casting = u < p.broadcast_fraction
            if np.any(casting):
                table = ctx.shared_table()
                grid = SpatialGrid(table["id"], table["x"], table["y"], p.side, p.radius)
                rows, neighbors = grid.query_radius(
                    block.states["x"][casting], block.states["y"][casting],
                    p.radius, exclude=block.logical[casting])
                if len(rows):
                    src = block.ids[casting][rows]
                    ctx.send_block(src, neighbors, delay=1)
        gate = ctx.draws(block)
        arrive = waypoint_step(block.states, gate, p.side, p.move_fraction)
        if np.any(arrive):
            assign_waypoints(block.states, arrive, ctx.draws(block, arrive),
                             ctx.draws(block, arrive), ctx.draws(block, arrive),
                             p.side, p.max_speed)

    def shared_payload(self, block: EntityBlock, ctx: Context) -> np.ndarray:
        rows = np.empty(len(block), dtype=MH_SHARED_DTYPE)
        rows["id"] = block.logical
        rows["x"] = block.states["x"]
        rows["y"] = block.states["y"]
        return rows

    def snapshot_xy(self, block: EntityBlock):
        return block.states["x"], block.states["y"]


def initial_x(seed: int, ids: np.ndarray, side: float) -> np.ndarray:
    """The x coordinate each host will draw at init (draw 0 of its stream)."""
    out = np.empty(len(ids), dtype=np.float64)
    for k, e in enumerate(np.asarray(ids).tolist()):
        out[k] = u64_to_unit(draw_u64(stream_base(seed, TAG_ENTITY, e), 0)) * side
    return out


def initial_allocation(kind: str, seed: int, ids: np.ndarray, n_lps: int,
                       side: float = 0.0) -> np.ndarray:
    """Map logical entities to containers: uniform random or vertical stripes."""
    if n_lps < 1:
        raise ValueError("need at least one container")
    if kind == "random":
        u = allocation_uniform(seed, np.asarray(ids))
        return np.minimum((u * n_lps).astype(np.int64), n_lps - 1)
    if kind == "stripes":
        if side <= 0:
            raise ValueError("stripes allocation needs the area side")
        x = initial_x(seed, np.asarray(ids), side)
        return np.minimum((x / (side / n_lps)).astype(np.int64), n_lps - 1)
    raise ValueError(f"unknown allocation kind {kind!r}")
