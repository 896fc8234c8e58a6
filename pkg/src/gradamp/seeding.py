"""Deterministic RNG streams keyed by (seed, round, client, ...) tuples.

Each stream is an independent PCG64 generator, so clients can train in any
order, or in parallel, without perturbing one another's draws.
"""

from __future__ import annotations

import numpy as np


def rng_stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))
