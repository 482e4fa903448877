"""Root-seed splitting.

Every random component derives its own integer seed from the run's root seed
and a label path, so adding a component never shifts another one's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(root: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
