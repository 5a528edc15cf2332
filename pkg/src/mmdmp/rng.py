"""Counter-based random streams.

Every stochastic entry point in the package draws from a Philox generator
keyed by (seed, purpose, index). Streams are therefore independent of
execution order and thread count: trial i always sees the same draws no
matter how many workers run trials in parallel.
"""
from __future__ import annotations

import numpy as np

GENERATOR_NAME = "philox"

# Purpose words keep streams for different uses disjoint even when the same
# user seed is passed everywhere.
SAMPLE_P = 1
SAMPLE_Q = 2
SAMPLE_CENTER = 3
SPLIT = 4
FEATURIZER_INIT = 5
BATCH_P = 6
BATCH_Q = 7
PERMUTATION = 8
SUBSAMPLE = 9
TEST_DRAW = 10

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Generator for the (seed, purpose, index) stream."""
    if not 0 <= index < (1 << 32):
        raise ValueError(f"stream index out of range: {index}")
    key = np.array(
        [int(seed) & _MASK64, ((purpose << 32) | index) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
