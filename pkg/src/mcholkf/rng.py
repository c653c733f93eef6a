"""Seeded random streams keyed by (seed, cycle, purpose).

Every random draw in the package flows through here so that results depend
only on the configured seed and the cycle index, never on worker count,
subdomain count, or execution order.
"""

from __future__ import annotations

import numpy as np

# Purpose tags keep the independent streams of one cycle from colliding.
TAG_INIT = 0
TAG_OBS_NOISE = 1
TAG_OBS_PERTURB = 2
TAG_SPINUP_REFERENCE = 3
TAG_SPINUP_MEMBERS = 4

_MASK64 = (1 << 64) - 1


def stream(seed: int, cycle: int = 0, tag: int = TAG_INIT) -> np.random.Generator:
    """Return the Generator for (seed, cycle, tag).

    The same triple always yields the same stream; distinct triples yield
    independent streams.
    """
    if cycle < 0:
        raise ValueError(f"cycle must be nonnegative, got {cycle}")
    if tag < 0:
        raise ValueError(f"tag must be nonnegative, got {tag}")
    return np.random.default_rng([int(seed) & _MASK64, int(cycle), int(tag)])
