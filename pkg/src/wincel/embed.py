"""Deterministic text embedding providers.

The pseudo embedder is a hash-based bag-of-words stand-in for a real text
encoder: deterministic across processes, order-invariant over tokens, and
similar texts get similar vectors. It exists so the full pipeline runs and
is testable without any ML model. The file provider serves precomputed
embeddings from an interchange file keyed by the sidecar source text.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ValidationError, ZeroNorm
from .io import read_embeddings, read_sidecar
from .linalg import l2_normalize_flagged

MIN_DIM = 8


def _token_seed(token: str, seed: int) -> int:
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def pseudo_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit vector for ``text``: sum of per-token hash vectors.

    Tokens are lowercased whitespace splits; each token seeds its own
    pseudo-random Gaussian vector, so shared tokens pull embeddings
    together. Raises :class:`ZeroNorm` on empty text.
    """
    if dim < MIN_DIM:
        raise ValidationError(f"pseudo embedding dim must be >= {MIN_DIM}, got {dim}")
    tokens = text.lower().split()
    if not tokens:
        raise ZeroNorm("cannot embed empty text")
    acc = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        rng = np.random.default_rng(_token_seed(tok, seed))
        acc += rng.standard_normal(dim)
    vec, was_zero = l2_normalize_flagged(acc)
    if was_zero:
        raise ZeroNorm("token vectors cancelled to zero")
    return vec


class PseudoProvider:
    """Embeds texts with :func:`pseudo_embed` at a fixed dim and seed."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < MIN_DIM:
            raise ValidationError(f"pseudo embedding dim must be >= {MIN_DIM}, got {dim}")
        self.dim = dim
        self.seed = seed

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = pseudo_embed(text, self.dim, self.seed)
        return out


class FileProvider:
    """Serves embeddings from an interchange file, looked up by source text."""

    def __init__(self, path: str):
        array = read_embeddings(path)
        sources = read_sidecar(path)
        if len(sources) != array.shape[0]:
            raise ValidationError(f"{path}: sidecar rows do not match embedding rows")
        self.dim = int(array.shape[1])
        self._array = array.astype(np.float64)
        self._index: dict[str, int] = {}
        for i, src in enumerate(sources):
            self._index.setdefault(src, i)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if text not in self._index:
                raise ValidationError(f"text not present in embedding file: {text!r}")
            rows.append(self._index[text])
        return self._array[rows].copy()


def make_provider(spec: str, dim: int = 64, seed: int = 0):
    """Build a provider from a CLI spec: ``pseudo`` or ``file:<path>``."""
    if spec == "pseudo":
        return PseudoProvider(dim=dim, seed=seed)
    if spec.startswith("file:"):
        return FileProvider(spec[len("file:"):])
    raise ValidationError(f"unknown provider spec {spec!r} (use 'pseudo' or 'file:<path>')")
