"""Deterministic seeded RNG streams.

Every stochastic stage derives its own child generator from (seed, stream
ids...) so results never depend on execution order or thread schedule.
"""

from __future__ import annotations

import numpy as np


def child_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, *stream)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, stream))))
