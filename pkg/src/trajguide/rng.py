"""Keyed, counter-based random number generation.

Every noise draw in a run is produced by a generator keyed on
``(seed, purpose, step)``.  Because the key fully determines the stream,
inserting or removing one consumer (say, toggling a guidance mechanism)
cannot shift the draws seen by any other consumer.  Philox is used as the
underlying bit generator: it is counter-based, so "jumping" to a key is
free and collision-resistant.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["keyed_generator", "keyed_normal"]

_MASK64 = (1 << 64) - 1


def _purpose_id(purpose: str) -> int:
    """Stable 64-bit id for a purpose label (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def keyed_generator(seed: int, purpose: str, step: int = 0) -> np.random.Generator:
    """Return a fresh generator for the (seed, purpose, step) slot.

    The same triple always yields the same stream; distinct triples yield
    statistically independent streams.
    """
    key = np.array([seed & _MASK64, _purpose_id(purpose)], dtype=np.uint64)
    counter = np.array([0, 0, step & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def keyed_normal(seed: int, purpose: str, shape: tuple[int, ...], step: int = 0) -> np.ndarray:
    """Standard-normal draw from the (seed, purpose, step) slot, float64."""
    return keyed_generator(seed, purpose, step).standard_normal(shape, dtype=np.float64)
