"""Indexable random streams.

Every random quantity in the pipeline is drawn from a stream keyed by the run
seed, a tag naming what the stream is for and the task index (draw or
replication number). Streams never depend on scheduling, so results are the
same for any worker count."""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class StreamTag(IntEnum):
    BOOTSTRAP = 1
    REPLICATION = 2
    REPLICATION_BOOTSTRAP = 3


def stream(seed: int, tag: StreamTag, *indices: int) -> np.random.Generator:
    """A Philox-backed generator for ``(seed, tag, *indices)``."""
    if seed < 0:
        raise ValueError(f'Seeds must be non-negative, got {seed}.')
    key = (int(tag), *(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))
