"""Seeded random streams.

Every stream is a :class:`numpy.random.Philox` (4x64, counter based)
generator keyed through ``SeedSequence([seed, *path])``.  The ``path``
names the consumer (e.g. ``("init", "D", 2)``) so that independent
consumers never share a stream and adding a consumer never perturbs the
others.
"""

from __future__ import annotations

import numpy as np

# stream tags; stable integers so that keys do not depend on hashing
_TAGS = {
    "synth": 1,
    "noise": 2,
    "split": 3,
    "init": 4,
    "D": 10,
    "P": 11,
    "W": 12,
}


def stream(seed: int, *path) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and a consumer path."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = [int(seed)]
    for p in path:
        key.append(_TAGS[p] if isinstance(p, str) else int(p))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
