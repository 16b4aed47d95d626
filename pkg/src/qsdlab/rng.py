"""Reproducible random streams.

Every simulation routine takes a caller-owned ``random.Random`` instance.
Streams are derived from a (seed, *key) tuple through numpy's SeedSequence so
that replica ``i`` of run ``seed`` is always the same stream, independent of how
work is partitioned across processes.
"""

from __future__ import annotations

import random

import numpy as np


def make_rng(seed: int, *key: int) -> random.Random:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    words = ss.generate_state(4, dtype=np.uint64)
    return random.Random(int.from_bytes(words.tobytes(), "little"))
