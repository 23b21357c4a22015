"""Deterministic derivation of independent random streams.

Every stochastic component in the package draws from its own
``numpy.random.Generator`` seeded by ``derive_seed(master_seed, *path)``,
where the path names the component (for example ``("pool", i)`` or
``("smc-move", round, particle)``). The derivation is a pinned hash
(BLAKE2b, 8-byte digest) over a tagged byte encoding of the path, so

* results never depend on scheduling or thread count: a unit of work owns
  its stream no matter when or where it runs;
* persisted seeds regenerate their datasets on any platform and any numpy
  version that keeps the PCG64 bit stream (guaranteed by numpy's policy).
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

__all__ = ["derive_seed", "stream"]

_U64 = 0xFFFFFFFFFFFFFFFF


def derive_seed(*path: int | str) -> int:
    """Hash a path of integers/strings into a 63-bit seed."""
    if not path:
        raise ValueError("seed path must not be empty")
    h = hashlib.blake2b(digest_size=8)
    for part in path:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(struct.pack(">I", len(raw)))
            h.update(raw)
        else:
            h.update(b"i")
            h.update(struct.pack(">Q", int(part) & _U64))
    return int.from_bytes(h.digest(), "big") >> 1


def stream(*path: int | str) -> np.random.Generator:
    """A fresh generator seeded from the derived path."""
    return np.random.default_rng(derive_seed(*path))
