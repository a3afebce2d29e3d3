"""Seed-stream derivation.

Every consumer of randomness gets its own stream, keyed by the root seed and
a purpose tag (``"env"``, ``"agent"``, ``"init"``, ``"eval/3"`` ...). Streams
are PCG64 generators seeded through :class:`numpy.random.SeedSequence`, so a
given ``(root, tag)`` pair yields the same numbers on every platform.
"""
import zlib

import numpy as np


def _tag_word(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed_sequence(root: int, tag: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, _tag_word(tag)])


def derive_seed(root: int, tag: str) -> int:
    """A 64-bit integer seed for the ``tag`` stream under ``root``."""
    lo, hi = derive_seed_sequence(root, tag).generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def derive_rng(root: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(root, tag)))
