"""Counter-based random number streams.

Every simulated entity owns an independent stream identified by
``(run seed, stream tag, entity id)``.  A draw is a pure function of the
stream identity and a per-entity counter, so the sequence an entity sees
is identical no matter which container executes it, how many containers
there are, or how work is interleaved.  The counter is part of the
entity's migratable state.

The generator is the splitmix64 finalizer applied to an affine counter
walk.  It is not cryptographic; it is a statistically solid, portable,
exactly reproducible source for simulation decisions.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Stream tags: namespaces so entity streams, placement draws and
# per-step global draws never collide.
TAG_ENTITY = 0xE17171E5
TAG_ALLOCATION = 0xA110C000
TAG_GLOBAL_STEP = 0x57E90BA1

_U64 = np.uint64
_C1 = _U64(0xBF58476D1CE4E5B9)
_C2 = _U64(0x94D049BB133111EB)
_GOLDEN_U = _U64(GOLDEN)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def mix64_array(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on a uint64 array."""
    z = z.astype(np.uint64, copy=True)
    z ^= z >> _U64(30)
    z *= _C1
    z ^= z >> _U64(27)
    z *= _C2
    z ^= z >> _U64(31)
    return z


def stream_base(seed: int, tag: int, ident: int) -> int:
    """Base state for stream ``(seed, tag, ident)``."""
    return mix64(mix64(seed ^ tag) + (ident & MASK64) * GOLDEN)


def stream_bases(seed: int, tag: int, idents: np.ndarray) -> np.ndarray:
    head = _U64(mix64(seed ^ tag))
    z = head + idents.astype(np.uint64) * _GOLDEN_U
    return mix64_array(z)


def draw_u64(base: int, counter: int) -> int:
    return mix64(base + ((counter + 1) & MASK64) * GOLDEN)


def draw_u64_array(bases: np.ndarray, counters: np.ndarray) -> np.ndarray:
    z = bases.astype(np.uint64) + (counters.astype(np.uint64) + _U64(1)) * _GOLDEN_U
    return mix64_array(z)


def u64_to_unit(v: int) -> float:
    """Map a u64 to a double in [0, 1) using the top 53 bits."""
    return (v >> 11) * (1.0 / (1 << 53))


def u64_array_to_unit(v: np.ndarray) -> np.ndarray:
    return (v >> _U64(11)).astype(np.float64) * (1.0 / (1 << 53))


class EntityStreams:
    """Vectorised access to the per-entity streams of one run.

    Counters live with the caller (they are entity state); this object
    only caches the per-entity stream bases.
    """

    def __init__(self, seed: int):
        self.seed = seed

    def bases_for(self, ids: np.ndarray) -> np.ndarray:
        return stream_bases(self.seed, TAG_ENTITY, ids)

    def draw(self, ids: np.ndarray, counters: np.ndarray) -> np.ndarray:
        """One uniform [0,1) per id at its current counter value.

        The caller is responsible for advancing the counters it passed.
        """
        return u64_array_to_unit(draw_u64_array(self.bases_for(ids), counters))

    def draw_scalar(self, ident: int, counter: int) -> float:
        return u64_to_unit(draw_u64(stream_base(self.seed, TAG_ENTITY, ident), counter))


def global_step_uniform(seed: int, purpose: int, step: int, ids: np.ndarray) -> np.ndarray:
    """Per-entity uniforms for a whole-simulation draw at one timestep.

    Keyed only by run seed, purpose, step and entity id, so the result
    is independent of entity placement.  Used e.g. to pick the subset of
    entities that act in a step.
    """
    base = _U64(mix64(mix64(seed ^ TAG_GLOBAL_STEP) + purpose * GOLDEN) ^ mix64(step))
    return u64_array_to_unit(mix64_array(base + ids.astype(np.uint64) * _GOLDEN_U))


def allocation_uniform(seed: int, ids: np.ndarray) -> np.ndarray:
    """Placement draw per entity, independent of everything else."""
    bases = stream_bases(seed, TAG_ALLOCATION, ids)
    return u64_array_to_unit(mix64_array(bases))
