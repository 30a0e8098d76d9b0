"""Seeded random streams.

Every consumer asks for ``stream(seed, purpose, *extra)``; the purpose string is
hashed into the seed sequence so that, e.g., the synthetic generator and the
annealer never draw from overlapping PCG64 streams for the same user seed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *extra: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _purpose_key(purpose), *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
