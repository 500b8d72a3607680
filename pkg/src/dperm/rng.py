"""Seeded random streams.

All randomness flows through ``numpy.random.Generator`` objects backed by PCG64
(128-bit state). Child streams are derived from a 64-bit root seed plus integer
keys via ``SeedSequence``, so a grid cell or a tuning candidate always sees the
same stream no matter the execution order.
"""

from __future__ import annotations

import numpy as np

from dperm.errors import PreconditionError

SEED_MAX = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= SEED_MAX:
        raise PreconditionError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def as_generator(rng) -> np.random.Generator:
    """Accepts a ``Generator`` (used as-is) or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise PreconditionError("an explicit seed or Generator is required")
    return np.random.Generator(np.random.PCG64(check_seed(rng)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed determined by ``seed`` and the integer ``keys``."""
    ss = np.random.SeedSequence([check_seed(seed), *[int(k) for k in keys]])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def split_seed(rng) -> tuple[np.random.Generator, int | None]:
    """Returns ``(generator, seed_or_None)`` for provenance recording."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = check_seed(rng)
    return as_generator(seed), seed
