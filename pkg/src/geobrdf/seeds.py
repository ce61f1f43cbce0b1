"""Named random sub-streams derived from a single root seed."""

import zlib

import numpy as np


def substream_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def rng(seed: int, name: str) -> np.random.Generator:
    """Generator for component ``name`` (e.g. "dem", "coeffs", "views", "init", "batches")."""
    return np.random.default_rng(substream_seed(seed, name))


def int_seed(seed: int, name: str) -> int:
    return int(substream_seed(seed, name).generate_state(1)[0])
