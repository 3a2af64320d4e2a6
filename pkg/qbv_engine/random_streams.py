"""
Seed fan-out: one run seed, independent named random streams.
"""

import zlib
import numpy as np


def _stream_key(stream: str) -> int:
    return zlib.crc32(stream.encode("utf-8"))


def derive_seed(seed: int, stream: str) -> int:
    """Derive a 63-bit seed for a named stream of the run seed."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(_stream_key(stream),))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    """Counter-based generator for a named stream.

    Streams with different names never share state, so adding a consumer of
    randomness does not shift the numbers any other consumer sees.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(_stream_key(stream),))
    return np.random.Generator(np.random.Philox(sequence))
