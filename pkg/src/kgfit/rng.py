"""Stage-forked random generators derived from one pipeline seed."""
from __future__ import annotations

import zlib

import numpy as np


def stage_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label``; stable across runs and platforms."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(ss))
