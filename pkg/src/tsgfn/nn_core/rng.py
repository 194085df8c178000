from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Names an independent random stream: the same ``(seed, stream_id)`` replays the same draws."""

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))))


# fixed stream ids, so adding a consumer never shifts another's draws
STREAM_INIT = 0
STREAM_PRIOR_INIT = 1
STREAM_ACTIONS = 2
STREAM_MEMBERS = 3
STREAM_BOOTSTRAP = 4
STREAM_EVAL = 5


def generator_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
