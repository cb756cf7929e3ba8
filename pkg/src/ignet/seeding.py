"""Named random sub-streams derived from one top-level seed."""

import zlib

import numpy as np


def substream(seed, name, *extra):
    """Generator for stream ``name`` of run ``seed``.

    Streams with different names (or extra integers, e.g. an epoch index)
    are statistically independent and stable across processes.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, *map(int, extra)]))


def subseed(seed, name, *extra):
    """A 63-bit integer seed for APIs that take ints."""
    return int(substream(seed, name, *extra).integers(0, 2**63 - 1))
