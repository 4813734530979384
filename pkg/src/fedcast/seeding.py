"""Counter-based seed derivation.

Each random stream is keyed by ``(master seed, purpose label, *ints)`` so
client scheduling can never change which numbers a stream produces.
"""

import hashlib
import struct

import numpy as np


def derive_seed(master: int, label: str, *keys: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master & 0xFFFFFFFFFFFFFFFF))
    h.update(label.encode("utf-8"))
    for k in keys:
        h.update(struct.pack("<q", int(k)))
    return int.from_bytes(h.digest(), "little")


def make_rng(master: int, label: str, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, label, *keys)))
