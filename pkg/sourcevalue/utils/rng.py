"""Seeded random substreams.

Every random draw in the engine comes from a counter-based Philox stream keyed
on ``(master seed, purpose tag, *counters)``, so draws made for different
purposes never interleave and work unit ``t`` sees the same stream no matter
which worker runs it.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_key(purpose: str) -> int:
    """Stable 64-bit key for a purpose tag."""
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, purpose, *counters)``."""
    entropy = [int(seed) & _MASK64, purpose_key(purpose), *(int(c) for c in counters)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
