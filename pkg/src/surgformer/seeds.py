"""Derivation of every random seed from one top-level seed."""

import zlib

import numpy as np


def derive_seed(base: int, *labels) -> int:
    """Stable 63-bit seed for the stream named by ``labels`` under ``base``."""
    keys = [int(base) & 0xFFFFFFFF] + [zlib.crc32(str(x).encode()) for x in labels]
    return int(np.random.SeedSequence(keys).generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))
