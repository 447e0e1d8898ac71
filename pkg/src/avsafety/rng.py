"""Named random streams.

Every random draw in the package comes from a generator derived from
``(base_seed, purpose, *indices)`` so runs are reproducible regardless of
execution order or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream_seed(base_seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    key = (purpose_key(purpose),) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(int(base_seed), spawn_key=key)


def stream(base_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for one named purpose."""
    return np.random.Generator(np.random.PCG64(stream_seed(base_seed, purpose, *indices)))


def derived_int(base_seed: int, purpose: str, *indices: int) -> int:
    """A 63-bit integer seed for a sub-run (e.g. one DLT run of one case)."""
    return int(stream_seed(base_seed, purpose, *indices).generate_state(1, np.uint64)[0] >> np.uint64(1))
