"""Entities, behaviors, messages and routing.

The model is decomposed into simulated entities hosted inside logical
process (LP) containers.  Entity state is a fixed-layout numpy record:
opaque to the engine, bit-exactly serializable, cheap to hash and to
move between containers.  Entities interact only through timestamped
messages addressed by entity id; the engine owns delivery, ordering and
accounting.

Determinism contract
--------------------
*   Per-entity random draws come from counter-based streams
    (:mod:`padsim.rng`); the counter is entity state.
*   Messages carry ``(src_lp, send_ts, seq)``; ``seq`` numbers the
    sends of one LP within one timestep in a canonical order, so ids
    are stable under re-execution.
*   Simultaneous deliveries are applied in ascending
    ``(src_lp, seq)`` order everywhere, including the sequential
    reference executor.  Under replication the logical send identity
    ``(logical src, logical seq)`` is used instead so that every
    replica sees the same order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import rng as prng

# Message kinds (wire values, see transport.wire).
KIND_MODEL = 0
KIND_NULL = 1
KIND_ANTI = 2
KIND_CONTROL = 3

KIND_NAMES = {KIND_MODEL: "model", KIND_NULL: "null", KIND_ANTI: "anti", KIND_CONTROL: "control"}


class SimulationError(Exception):
    """Base class for engine errors."""


class RegistrationError(SimulationError):
    pass


class UnknownEntityError(SimulationError):
    pass


class ProtocolConstraintError(SimulationError):
    """A send violated the active protocol's timing contract."""


@dataclass(frozen=True)
class SimMessage:
    """One logical interaction, as seen by model code and audits."""

    src_lp: int
    send_ts: int
    seq: int
    src: int
    dst: int
    recv_ts: int
    kind: int = KIND_MODEL
    payload: bytes = b""

    @property
    def msg_id(self) -> tuple[int, int, int]:
        return (self.src_lp, self.send_ts, self.seq)


@dataclass
class MessageBlock:
    """A batch of same-kind messages on one link with one receive time.

    Blocks are the queue and wire unit; logically each row is one
    message.  ``seqs`` are the per-(src LP, send step) sequence numbers
    of the rows.  Anti blocks reference the rows of a prior model block
    by the same identity triple.
    """

    kind: int
    src_lp: int
    dst_lp: int
    send_ts: int
    recv_ts: int
    seqs: np.ndarray
    src_ids: np.ndarray
    dst_ids: np.ndarray
    payloads: Optional[list] = None
    # replication metadata, populated when fault tolerance is on
    lsrc: Optional[np.ndarray] = None
    lseq: Optional[np.ndarray] = None
    src_replica: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.seqs)

    def ident(self) -> tuple[int, int, int, int]:
        return (self.src_lp, self.dst_lp, self.send_ts, self.recv_ts)

    def messages(self) -> Iterable[SimMessage]:
        for i in range(len(self.seqs)):
            payload = b"" if self.payloads is None else self.payloads[i]
            yield SimMessage(
                self.src_lp, self.send_ts, int(self.seqs[i]), int(self.src_ids[i]),
                int(self.dst_ids[i]), self.recv_ts, self.kind, payload,
            )


@dataclass
class ControlMessage:
    """Out-of-band coordination traffic (barriers, transfers, collectives).

    Not a simulation event: carries no virtual timestamp ordering
    obligations beyond per-link FIFO.
    """

    op: str
    src_lp: int
    dst_lp: int
    data: object = None


_ROW_HEADER = struct.Struct("<qqhQ")  # id, logical, replica, rng_counter


class EntityBlock:
    """Columnar storage for the entities of one behavior in one container.

    ``ids`` is kept ascending; all other columns are row-aligned to it.
    """

    def __init__(self, behavior: "Behavior"):
        self.behavior = behavior
        self.ids = np.empty(0, dtype=np.int64)
        self.logical = np.empty(0, dtype=np.int64)
        self.replica = np.empty(0, dtype=np.int16)
        self.rng_counter = np.empty(0, dtype=np.uint64)
        self.states = np.empty(0, dtype=behavior.state_dtype)

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, ids: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.ids, ids)
        if np.any(idx >= len(self.ids)) or np.any(self.ids[np.minimum(idx, len(self.ids) - 1)] != ids):
            missing = set(np.asarray(ids).tolist()) - set(self.ids.tolist())
            raise UnknownEntityError(f"entities not hosted here: {sorted(missing)[:8]}")
        return idx

    def add(self, ids, logical, replica, rng_counter, states) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(np.concatenate([self.ids, ids]), kind="stable")
        self.ids = np.concatenate([self.ids, ids])[order]
        self.logical = np.concatenate([self.logical, np.asarray(logical, dtype=np.int64)])[order]
        self.replica = np.concatenate([self.replica, np.asarray(replica, dtype=np.int16)])[order]
        self.rng_counter = np.concatenate([self.rng_counter, np.asarray(rng_counter, dtype=np.uint64)])[order]
        self.states = np.concatenate([self.states, np.asarray(states, dtype=self.behavior.state_dtype)])[order]

    def remove(self, ids: np.ndarray) -> None:
        idx = self.index_of(np.asarray(ids, dtype=np.int64))
        keep = np.ones(len(self.ids), dtype=bool)
        keep[idx] = False
        self.ids = self.ids[keep]
        self.logical = self.logical[keep]
        self.replica = self.replica[keep]
        self.rng_counter = self.rng_counter[keep]
        self.states = self.states[keep]

    def serialize_rows(self, ids: np.ndarray) -> bytes:
        """Bit-exact transferable encoding of the given entities."""
        idx = self.index_of(np.asarray(ids, dtype=np.int64))
        out = bytearray()
        state_bytes = self.states.view((np.uint8, self.states.dtype.itemsize)) if len(self.states) else None
        for i in idx:
            out += _ROW_HEADER.pack(int(self.ids[i]), int(self.logical[i]),
                                    int(self.replica[i]), int(self.rng_counter[i]))
            out += state_bytes[i].tobytes()
        return bytes(out)

    def install_rows(self, blob: bytes) -> np.ndarray:
        """Inverse of :meth:`serialize_rows`; returns the installed ids."""
        item = self.behavior.state_dtype.itemsize
        stride = _ROW_HEADER.size + item
        if len(blob) % stride:
            raise SimulationError("corrupt entity transfer payload")
        n = len(blob) // stride
        ids = np.empty(n, dtype=np.int64)
        logical = np.empty(n, dtype=np.int64)
        replica = np.empty(n, dtype=np.int16)
        counters = np.empty(n, dtype=np.uint64)
        states = np.empty(n, dtype=self.behavior.state_dtype)
        for k in range(n):
            off = k * stride
            ids[k], logical[k], replica[k], counters[k] = _ROW_HEADER.unpack_from(blob, off)
            states[k] = np.frombuffer(blob, dtype=self.behavior.state_dtype,
                                      count=1, offset=off + _ROW_HEADER.size)[0]
        self.add(ids, logical, replica, counters, states)
        return ids

    def clone(self) -> "EntityBlock":
        other = EntityBlock(self.behavior)
        other.ids = self.ids.copy()
        other.logical = self.logical.copy()
        other.replica = self.replica.copy()
        other.rng_counter = self.rng_counter.copy()
        other.states = self.states.copy()
        return other

    def restore(self, other: "EntityBlock") -> None:
        self.ids = other.ids.copy()
        self.logical = other.logical.copy()
        self.replica = other.replica.copy()
        self.rng_counter = other.rng_counter.copy()
        self.states = other.states.copy()


@dataclass
class Delivery:
    """Sorted batch of model messages arriving at one block for one step."""

    slots: np.ndarray      # row indices into the receiving block
    src_ids: np.ndarray
    payloads: Optional[list]


class EntityView:
    """Scalar handle passed to callback-style behaviors."""

    __slots__ = ("_block", "_i", "_ctx")

    def __init__(self, block: EntityBlock, i: int, ctx: "Context"):
        self._block = block
        self._i = i
        self._ctx = ctx

    @property
    def id(self) -> int:
        return int(self._block.ids[self._i])

    @property
    def logical_id(self) -> int:
        return int(self._block.logical[self._i])

    @property
    def state(self) -> np.void:
        # numpy record scalar: field assignment writes through to the block
        return self._block.states[self._i]

    def rng(self) -> float:
        """Draw one uniform [0,1) from this entity's stream."""
        c = int(self._block.rng_counter[self._i])
        self._block.rng_counter[self._i] += np.uint64(1)
        return self._ctx.streams.draw_scalar(self.logical_id, c)

    def send(self, dst: int, delay: int = 1, payload: bytes = b"") -> None:
        self._ctx.send(self.id, dst, delay, payload)


class Behavior:
    """A registered model behavior.

    Subclasses either override the scalar hooks (``on_init``,
    ``on_message``, ``on_step``) or the block hooks for vectorised
    execution; the defaults bridge one to the other.  ``state_dtype``
    fixes the entity state layout.
    """

    name: str = ""
    state_dtype: np.dtype = np.dtype([])
    lookahead: int = 1
    shared_dtype: Optional[np.dtype] = None

    # -- scalar hooks -------------------------------------------------
    def on_init(self, entity: EntityView, ctx: "Context") -> None:
        pass

    def on_message(self, entity: EntityView, msg: SimMessage, ctx: "Context") -> None:
        pass

    def on_step(self, entity: EntityView, ctx: "Context") -> None:
        pass

    # -- block hooks ---------------------------------------------------
    def init_block(self, block: EntityBlock, ctx: "Context") -> None:
        for i in range(len(block)):
            self.on_init(EntityView(block, i, ctx), ctx)

    def deliver_block(self, block: EntityBlock, delivery: Delivery, ctx: "Context") -> None:
        for k in range(len(delivery.slots)):
            i = int(delivery.slots[k])
            payload = b"" if delivery.payloads is None else delivery.payloads[k]
            msg = SimMessage(-1, -1, -1, int(delivery.src_ids[k]), int(block.ids[i]),
                             ctx.step, KIND_MODEL, payload)
            self.on_message(EntityView(block, i, ctx), msg, ctx)

    def step_block(self, block: EntityBlock, ctx: "Context") -> None:
        for i in range(len(block)):
            self.on_step(EntityView(block, i, ctx), ctx)

    # -- optional capabilities ----------------------------------------
    def shared_payload(self, block: EntityBlock, ctx: "Context") -> Optional[np.ndarray]:
        """Rows published to every container at each step boundary."""
        return None

    def snapshot_xy(self, block: EntityBlock) -> Optional[tuple[np.ndarray, np.ndarray]]:
        """Positions for snapshot artifacts; None if the model has none."""
        return None


class CallbackBehavior(Behavior):
    def __init__(self, name: str, state_dtype: np.dtype,
                 on_init: Optional[Callable] = None,
                 on_step: Optional[Callable] = None,
                 on_message: Optional[Callable] = None,
                 lookahead: int = 1):
        self.name = name
        self.state_dtype = np.dtype(state_dtype)
        self.lookahead = lookahead
        self._on_init = on_init
        self._on_step = on_step
        self._on_message = on_message

    def on_init(self, entity, ctx):
        if self._on_init:
            self._on_init(entity, ctx)

    def on_step(self, entity, ctx):
        if self._on_step:
            self._on_step(entity, ctx)

    def on_message(self, entity, msg, ctx):
        if self._on_message:
            self._on_message(entity, msg, ctx)


class BehaviorRegistry:
    def __init__(self):
        self._by_name: dict[str, Behavior] = {}

    def register(self, behavior: Behavior) -> Behavior:
        if not behavior.name:
            raise RegistrationError("behavior needs a non-empty name")
        if behavior.name in self._by_name:
            raise RegistrationError(f"behavior {behavior.name!r} already registered")
        self._by_name[behavior.name] = behavior
        return behavior

    def register_callbacks(self, name: str, state_dtype, on_init=None, on_step=None,
                           on_message=None, lookahead: int = 1) -> Behavior:
        return self.register(CallbackBehavior(name, state_dtype, on_init, on_step,
                                              on_message, lookahead))

    def get(self, name: str) -> Behavior:
        try:
            return self._by_name[name]
        except KeyError:
            raise RegistrationError(f"unknown behavior {name!r}") from None

    def names(self) -> list[str]:
        return sorted(self._by_name)


@dataclass
class PendingSend:
    src: np.ndarray        # physical sender ids
    dst_logical: np.ndarray
    delay: np.ndarray
    payloads: Optional[list]


class Router:
    """Global ownership and replica tables, replicated in every container.

    All containers apply the same ownership updates at the same step
    boundaries, so the replicated tables never diverge.
    """

    def __init__(self, n_lps: int, lp_nodes: list[int]):
        self.n_lps = n_lps
        self.lp_nodes = list(lp_nodes)
        self.owner = np.empty(0, dtype=np.int64)          # physical id -> lp
        self.logical_of = np.empty(0, dtype=np.int64)
        self.replica_of = np.empty(0, dtype=np.int16)
        self.replicas: dict[int, list[int]] = {}          # logical id -> physical ids
        self.behavior_of: dict[int, str] = {}

    @property
    def n_entities(self) -> int:
        return len(self.owner)

    def node_of_lp(self, lp: int) -> int:
        return self.lp_nodes[lp]

    def add_entities(self, ids, owners, logical, replica, behavior_name: str) -> None:
        ids = np.asarray(ids)
        hi = int(ids.max()) + 1 if len(ids) else 0
        if hi > len(self.owner):
            grow = hi - len(self.owner)
            self.owner = np.concatenate([self.owner, np.full(grow, -1, dtype=np.int64)])
            self.logical_of = np.concatenate([self.logical_of, np.full(grow, -1, dtype=np.int64)])
            self.replica_of = np.concatenate([self.replica_of, np.zeros(grow, dtype=np.int16)])
        self.owner[ids] = owners
        self.logical_of[ids] = logical
        self.replica_of[ids] = replica
        for pid, log in zip(ids.tolist(), np.asarray(logical).tolist()):
            self.replicas.setdefault(log, []).append(pid)
            self.behavior_of[pid] = behavior_name
        for log in set(np.asarray(logical).tolist()):
            self.replicas[log].sort()

    def drop_entities(self, ids: Iterable[int]) -> None:
        for pid in ids:
            log = int(self.logical_of[pid])
            if pid in self.replicas.get(log, []):
                self.replicas[log].remove(pid)
            self.owner[pid] = -1

    def move(self, pid: int, to_lp: int) -> None:
        self.owner[pid] = to_lp

    def fanout(self, dst_logical: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expand logical destinations to physical ones.

        Returns (row index into the input, physical dst id); identity
        when no logical id has more than one replica.
        """
        rows = []
        phys = []
        for k, log in enumerate(np.asarray(dst_logical).tolist()):
            targets = self.replicas.get(log)
            if not targets:
                raise UnknownEntityError(f"send to unknown entity {log}")
            for pid in targets:
                rows.append(k)
                phys.append(pid)
        return np.asarray(rows, dtype=np.int64), np.asarray(phys, dtype=np.int64)

    def roster_sizes(self) -> np.ndarray:
        live = self.owner >= 0
        return np.bincount(self.owner[live], minlength=self.n_lps)


def canonical_send_order(recv_ts: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """The fixed order in which one container's sends of one step are
    numbered: ascending (recv_ts, src, dst)."""
    return np.lexsort((dst, src, recv_ts))


class Context:
    """Execution context handed to behavior hooks.

    One per container (or one global, in the sequential executor).
    Collects sends staged during a step; the owning executor flushes
    them into message blocks at the step boundary.
    """

    def __init__(self, streams: prng.EntityStreams, params, router: Router,
                 seed: int, lp: int = 0, min_delay: int = 1):
        self.streams = streams
        self.params = params
        self.router = router
        self.seed = seed
        self.lp = lp
        self.step = 0
        self.min_delay = min_delay
        self._staged: list[PendingSend] = []
        self._shared: dict[int, dict[int, np.ndarray]] = {}   # step -> lp -> rows

    # -- sends ---------------------------------------------------------
    def send(self, src: int, dst: int, delay: int = 1, payload: bytes = b"") -> None:
        self.send_block(np.asarray([src], dtype=np.int64),
                        np.asarray([dst], dtype=np.int64),
                        delay, [payload] if payload else None)

    def send_block(self, src_ids: np.ndarray, dst_ids: np.ndarray, delay=1,
                   payloads: Optional[list] = None) -> None:
        delay_arr = np.broadcast_to(np.asarray(delay, dtype=np.int64), src_ids.shape).copy()
        if len(delay_arr) and int(delay_arr.min()) < self.min_delay:
            raise ProtocolConstraintError(
                f"send delay {int(delay_arr.min())} below the protocol floor "
                f"{self.min_delay} (messages must be scheduled for future steps)")
        self._staged.append(PendingSend(np.asarray(src_ids, dtype=np.int64),
                                        np.asarray(dst_ids, dtype=np.int64),
                                        delay_arr, payloads))

    def take_staged(self) -> list[PendingSend]:
        staged, self._staged = self._staged, []
        return staged

    # -- randomness ----------------------------------------------------
    def draws(self, block: EntityBlock, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """One uniform per (selected) row, advancing the row counters."""
        if mask is None:
            u = self.streams.draw(block.logical, block.rng_counter)
            block.rng_counter += np.uint64(1)
            return u
        u = self.streams.draw(block.logical[mask], block.rng_counter[mask])
        block.rng_counter[mask] += np.uint64(1)
        return u

    def global_uniform(self, purpose: int, ids: np.ndarray) -> np.ndarray:
        return prng.global_step_uniform(self.seed, purpose, self.step, ids)

    # -- shared step tables ---------------------------------------------
    def put_shared(self, step: int, lp: int, rows: np.ndarray) -> None:
        self._shared.setdefault(step, {})[lp] = rows

    def shared_table(self) -> np.ndarray:
        """All containers' published rows for the current step, joined.

        Rows are deduplicated by their first field (the logical id) so
        replicated entities appear once.
        """
        pieces = self._shared.get(self.step, {})
        rows = [pieces[lp] for lp in sorted(pieces)]
        if not rows:
            raise SimulationError(f"no shared rows published for step {self.step}")
        table = np.concatenate(rows)
        key_field = table.dtype.names[0]
        _, first = np.unique(table[key_field], return_index=True)
        return table[first]

    def prune_shared(self, before_step: int) -> None:
        for s in [s for s in self._shared if s < before_step]:
            del self._shared[s]
