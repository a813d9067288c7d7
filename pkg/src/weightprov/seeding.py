"""Labeled RNG substreams.

Every random choice in the package flows from one root seed through
labeled substreams, so parallel and serial execution schedules produce
identical results and any single number in a report can be regenerated.
"""

from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence | np.random.Generator"


def as_generator(seed) -> np.random.Generator:
    """Coerce an int, SeedSequence, or Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))


def subseed(seed, *key: int) -> np.random.SeedSequence:
    """SeedSequence for the substream of ``seed`` labeled by the integer key.

    ``seed`` must be an int or SeedSequence (generators cannot be re-keyed);
    keys compose, so subseed(subseed(s, 1), 2) == subseed(s, 1, 2).
    """
    if isinstance(seed, np.random.SeedSequence):
        base = seed.entropy
        prefix = tuple(seed.spawn_key)
    else:
        base = int(seed)
        prefix = ()
    return np.random.SeedSequence(
        entropy=base, spawn_key=prefix + tuple(int(k) for k in key)
    )


def substream(seed, *key: int) -> np.random.Generator:
    """Generator over the labeled substream of ``seed``."""
    return np.random.default_rng(subseed(seed, *key))
