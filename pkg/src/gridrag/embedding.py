"""Embedding providers.

Only the offline mock provider ships here; live providers implement the same
three methods and an ``embedder_id``.
"""
from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class Embedder(Protocol):
    embedder_id: str

    def dimension(self) -> int: ...

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, payload: bytes, alt_text: str) -> np.ndarray: ...


class MockEmbedder:
    """Signed hashing of character trigrams into a small dense vector.

    Deterministic across runs and platforms (hashlib, not ``hash()``).
    Images embed through their alt text and caption only.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.embedder_id = f"mock-trigram-{dim}"

    def dimension(self) -> int:
        return self.dim

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f" {' '.join(text.lower().split())} "
        if padded.strip() == "":
            return vec
        for i in range(len(padded) - 2):
            h = int.from_bytes(hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest(), "little")
            vec[h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_image(self, payload: bytes, alt_text: str) -> np.ndarray:
        return self.embed_text(alt_text)


def get_embedder(name: str) -> Embedder:
    if name == "mock" or name.startswith("mock-trigram"):
        dim = int(name.rsplit("-", 1)[1]) if name.startswith("mock-trigram-") else 64
        return MockEmbedder(dim)
    raise ValueError(f"unknown embedder {name!r}; available: mock")
