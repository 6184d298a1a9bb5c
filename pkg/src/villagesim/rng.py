"""Deterministic random-number substreams.

Every stochastic step in the engine draws from a generator keyed by the base
seed plus a path of string/integer labels (scenario id, method, replicate
index, ...). The key path is hashed with SHA-256 into a ``SeedSequence``, so
any single replicate is reproducible in isolation and results never depend on
execution order or worker count.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_U64 = (1 << 64) - 1


def stream_entropy(base_seed: int, *keys: int | str) -> list[int]:
    """Hash a (seed, key path) into four 32-bit entropy words."""
    h = hashlib.sha256()
    h.update(struct.pack("<Q", base_seed & _U64))
    for key in keys:
        if isinstance(key, (int, np.integer)):
            h.update(b"i")
            h.update(struct.pack("<q", int(key)))
        elif isinstance(key, str):
            h.update(b"s")
            h.update(key.encode("utf-8"))
            h.update(b"\x00")
        else:
            raise TypeError(f"substream keys must be int or str, got {type(key).__name__}")
    digest = h.digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def substream(base_seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent PCG64 generator for the given key path."""
    return np.random.default_rng(np.random.SeedSequence(stream_entropy(base_seed, *keys)))
