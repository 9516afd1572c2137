"""Deterministic random substreams.

All randomness in the package flows through one root seed. Named substreams
keep the channel draws, the rank-one randomization, and the Monte-Carlo
oracles independent of each other, so adding samples to one never perturbs
another. Tags are hashed with crc32 (process-independent, unlike ``hash``).
"""
import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Generator for the substream named by ``tags`` under ``root_seed``.

    Same (seed, tags) always yields the same stream; distinct tags yield
    statistically independent streams.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
