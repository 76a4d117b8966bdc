"""Deterministic random streams derived from one base seed.

Every purpose (data, init, SNR draw, batch shuffle) gets its own stream by
hashing the base seed with a purpose tag and optional extra indices, so runs
are reproducible and resumable without storing generator state.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed, tag, *extra):
    """A fresh Generator keyed by (seed, tag, *extra)."""
    entropy = [int(seed) & ((1 << 64) - 1), zlib.crc32(tag.encode("utf-8"))]
    entropy.extend(int(e) & ((1 << 64) - 1) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
