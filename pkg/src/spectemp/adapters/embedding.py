"""Deterministic hash embeddings standing in for a CLIP-style encoder."""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

from ..timeline import FrameRef
from .base import EmbeddingProvider

DEFAULT_DIM = 256


def _key_bytes(key: Union[str, FrameRef]) -> bytes:
    if isinstance(key, FrameRef):
        key = f"frame@{float(key.timestamp_s)!r}"
    return str(key).encode("utf-8")


def hash_embed(key: Union[str, FrameRef], dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Map ``key`` to a unit vector in ``R^dim``.

    SHAKE-256 over ``(seed, key)`` supplies ``dim`` 32-bit words which are
    centred to ``[-1, 1)`` and L2-normalised. Only hashlib and IEEE arithmetic
    are involved, so the result is identical on every platform and numpy version.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    h = hashlib.shake_256()
    h.update(f"spectemp-embed:{int(seed)}:".encode())
    h.update(_key_bytes(key))
    words = np.frombuffer(h.digest(4 * dim), dtype="<u4").astype(np.float64)
    v = words / 2.0**31 - 1.0
    norm = np.linalg.norm(v)
    if norm == 0.0:  # pragma: no cover - needs an all-2**31 digest
        v = np.ones(dim)
        norm = np.sqrt(dim)
    return v / norm


def hash_embed_block(key: str, n: int, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """``n`` unit rows expanded from one key; row ``i`` differs from ``hash_embed``.

    One SHAKE-256 stream covers the whole block, which keeps generating long
    synthetic timelines cheap.
    """
    if n == 0:
        return np.zeros((0, dim))
    h = hashlib.shake_256()
    h.update(f"spectemp-block:{int(seed)}:{dim}:".encode())
    h.update(str(key).encode("utf-8"))
    words = np.frombuffer(h.digest(4 * dim * n), dtype="<u4").astype(np.float64)
    v = (words / 2.0**31 - 1.0).reshape(n, dim)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class HashEmbeddingProvider(EmbeddingProvider):
    """Text goes through :func:`hash_embed`; frames use their stored features.

    Synthetic timelines are generated with the same hash, so a frame planted to
    answer a question has features equal to that question's embedding.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed_text(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim, self.seed)

    def embed_frame(self, frame: FrameRef) -> np.ndarray:
        f = np.asarray(frame.features, dtype=np.float64)
        if f.shape == (self.dim,):
            return f / np.linalg.norm(f)
        return hash_embed(frame, self.dim, self.seed)
