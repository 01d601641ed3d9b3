"""Model with no message traffic at all.

One quiet entity per container, ticking a counter.  Useful to exercise
conservative synchronization in the absence of model events: progress
then depends entirely on the protocol's own bound advertisements.
"""

from __future__ import annotations

import numpy as np

from ..core import Behavior, Context, EntityBlock

IDLE_STATE_DTYPE = np.dtype([("ticks", "u8")])


class IdleBehavior(Behavior):
    name = "idle"
    state_dtype = IDLE_STATE_DTYPE
    lookahead = 1

    def step_block(self, block: EntityBlock, ctx: Context) -> None:
        block.states["ticks"] += 1
