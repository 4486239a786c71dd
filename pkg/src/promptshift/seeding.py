"""Named-stream seed derivation so every random decision is replayable.

A single root seed fans out into independent streams ("data", "init",
"mask", ...) via hashing; two runs that share the root seed see identical
data and initialization no matter which optional components are enabled.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *streams) -> int:
    """Stable 63-bit seed for the named stream under the given root."""
    h = hashlib.sha256(str(int(root)).encode())
    for s in streams:
        h.update(b"|")
        h.update(str(s).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def stream_rng(root: int, *streams) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *streams))
