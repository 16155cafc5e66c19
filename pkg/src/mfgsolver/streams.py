"""Deterministic RNG substreams keyed by a root seed plus string/int tags.

Every stochastic stage of the solver pulls its noise from its own substream,
so runs are reproducible bit-for-bit regardless of how stages are reordered
or skipped, and parallel stages never share a generator.
"""

import hashlib

import numpy as np


def _tag_to_int(tag) -> int:
    digest = hashlib.blake2s(repr(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator derived from (seed, *tags).

    Identical arguments always yield identical streams; distinct tag tuples
    yield statistically independent streams (SeedSequence mixing).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
