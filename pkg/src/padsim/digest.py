"""Trajectory digests.

A run digest is one 64-bit hash per timestep, folding the post-step
state of every entity.  Two runs of the same scenario are behaviorally
identical iff their digest columns are equal; the fold is an XOR over
id-keyed row hashes, so it does not depend on how entities are
partitioned across containers.

Under replication, rows are retained per entity so that the digest can
be projected to logical entities (one representative replica per group)
and so replica divergence can be audited.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import EntityBlock
from .rng import GOLDEN, mix64_array

_U64 = np.uint64
_INIT = _U64(0x8B1A9953C4611D7A)
_GOLD = _U64(GOLDEN)


def hash_rows(block: EntityBlock) -> np.ndarray:
    """Per-row 64-bit hash over state bytes, rng counter and logical id."""
    n = len(block)
    if n == 0:
        return np.empty(0, dtype=np.uint64)
    item = block.states.dtype.itemsize
    padded = (item + 7) // 8 * 8
    if item == 0:
        words = np.zeros((n, 1), dtype=np.uint64)
    elif padded == item:
        words = block.states.view(np.uint8).reshape(n, item)
        words = np.ascontiguousarray(words).view(np.uint64).reshape(n, item // 8)
    else:
        buf = np.zeros((n, padded), dtype=np.uint8)
        buf[:, :item] = block.states.view(np.uint8).reshape(n, item)
        words = buf.view(np.uint64).reshape(n, padded // 8)
    h = np.full(n, _INIT, dtype=np.uint64)
    for j in range(words.shape[1]):
        h = mix64_array(h ^ words[:, j])
    h = mix64_array(h ^ block.rng_counter)
    h = mix64_array(h ^ block.logical.astype(np.uint64) * _GOLD)
    return h


def fold_rows(logical: np.ndarray, row_hashes: np.ndarray) -> int:
    """Order-independent fold of id-tagged row hashes into one word."""
    if len(row_hashes) == 0:
        return 0
    tagged = mix64_array(row_hashes ^ mix64_array(logical.astype(np.uint64) + _U64(1)))
    return int(np.bitwise_xor.reduce(tagged))


@dataclass
class EntityStepHashes:
    """Per-entity hashes of one container for one step (replication mode)."""

    logical: np.ndarray
    replica: np.ndarray
    hashes: np.ndarray


class DigestCollector:
    """Accumulates one container's digest contributions.

    In streaming mode only the per-step XOR fold is kept.  With
    ``keep_rows`` the per-entity hashes are retained so logical
    projection and replica audits are possible after the run.
    """

    def __init__(self, horizon: int, keep_rows: bool = False):
        self.horizon = horizon
        self.keep_rows = keep_rows
        self.step_fold = np.zeros(horizon, dtype=np.uint64)
        self.rows: dict[int, EntityStepHashes] = {}

    def record(self, step: int, blocks: list[EntityBlock]) -> None:
        """Record the post-step state of this container's blocks.

        Re-recording a step replaces the previous value (optimistic
        executors re-run steps)."""
        parts_log = [b.logical for b in blocks if len(b)]
        parts_rep = [b.replica for b in blocks if len(b)]
        parts_hash = [hash_rows(b) for b in blocks if len(b)]
        logical = np.concatenate(parts_log) if parts_log else np.empty(0, dtype=np.int64)
        replica = np.concatenate(parts_rep) if parts_rep else np.empty(0, dtype=np.int16)
        hashes = np.concatenate(parts_hash) if parts_hash else np.empty(0, dtype=np.uint64)
        if self.keep_rows:
            self.rows[step] = EntityStepHashes(logical.copy(), replica.copy(), hashes.copy())
            take = replica == 0
            self.step_fold[step] = fold_rows(logical[take], hashes[take])
        else:
            self.step_fold[step] = fold_rows(logical, hashes)


def merge_step_folds(parts: list[np.ndarray]) -> np.ndarray:
    out = parts[0].copy()
    for p in parts[1:]:
        out ^= p
    return out


def merge_logical_digest(collectors: list[DigestCollector], horizon: int) -> np.ndarray:
    """Project retained per-entity rows to logical entities.

    For each step and logical id the lowest-indexed replica present
    contributes; in fault-free runs that is replica 0, after a crash the
    surviving replica takes over seamlessly (replicas are bit-identical
    while co-live).
    """
    out = np.zeros(horizon, dtype=np.uint64)
    for t in range(horizon):
        logs: dict[int, tuple[int, int]] = {}
        for col in collectors:
            rec = col.rows.get(t)
            if rec is None:
                continue
            for log, rep, h in zip(rec.logical.tolist(), rec.replica.tolist(),
                                   rec.hashes.tolist()):
                cur = logs.get(log)
                if cur is None or rep < cur[0]:
                    logs[log] = (rep, h)
        if logs:
            ids = np.fromiter(logs.keys(), dtype=np.int64, count=len(logs))
            hs = np.fromiter((v[1] for v in logs.values()), dtype=np.uint64, count=len(logs))
            out[t] = fold_rows(ids, hs)
    return out


def replica_divergence(collectors: list[DigestCollector], horizon: int) -> Optional[tuple[int, int]]:
    """First (step, logical id) where co-live replicas disagree, if any."""
    for t in range(horizon):
        seen: dict[int, int] = {}
        for col in collectors:
            rec = col.rows.get(t)
            if rec is None:
                continue
            for log, h in zip(rec.logical.tolist(), rec.hashes.tolist()):
                if log in seen and seen[log] != h:
                    return (t, log)
                seen[log] = h
    return None


def write_digest_csv(path: Path, step_fold: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "digest"])
        for t, v in enumerate(step_fold.tolist()):
            w.writerow([t, f"{v:016x}"])


def read_digest_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = np.zeros(len(rows), dtype=np.uint64)
    for r in rows:
        out[int(r["step"])] = int(r["digest"], 16)
    return out


@dataclass
class DigestComparison:
    equal: bool
    first_step: Optional[int] = None

    def describe(self) -> str:
        if self.equal:
            return "digests equal"
        return f"digests diverge at step {self.first_step}"


def compare_folds(a: np.ndarray, b: np.ndarray) -> DigestComparison:
    if len(a) != len(b):
        return DigestComparison(False, min(len(a), len(b)))
    diff = np.nonzero(a != b)[0]
    if len(diff) == 0:
        return DigestComparison(True)
    return DigestComparison(False, int(diff[0]))
