"""Deterministic random streams.

Every stream is keyed by ``(master seed, module name, replica index)``.  The
module name is hashed with CRC-32 so the key is stable across processes and
Python versions; numpy's ``SeedSequence`` mixes the key into PCG64 state.
"""

from __future__ import annotations

import zlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream_key(seed: int, module: str, replica: int = 0) -> list[int]:
    seed = int(seed) & SEED_MASK
    return [seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(module.encode("utf-8")), int(replica)]


def stream(seed: int, module: str, replica: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(stream_key(seed, module, replica))))


def streams(seed: int, module: str, count: int, start: int = 0) -> list[np.random.Generator]:
    return [stream(seed, module, r) for r in range(start, start + count)]
