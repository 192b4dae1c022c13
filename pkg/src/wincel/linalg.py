"""Minimal dense vector/matrix helpers used by every other module.

Embedding vectors and matrices are plain float64 ndarrays (1-D and 2-D
row-major respectively). Interchange files store float32; everything in
memory is computed in float64. All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .errors import AllMasked, DimMismatch

# Norms below this are treated as exactly zero (padding vectors).
ZERO_NORM_EPS = 1e-12


def as_vector(v, dim: int | None = None) -> np.ndarray:
    """Validate and convert to a finite float64 1-D array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimMismatch(f"expected dim {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains NaN or Inf")
    return arr


def as_matrix(m, dim: int | None = None) -> np.ndarray:
    """Validate and convert to a finite float64 2-D array (rows x dim)."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimMismatch(f"expected dim {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm; a (near-)zero vector maps to zero.

    Zero vectors are legal inputs because padded sentences carry all-zero
    features; use :func:`l2_normalize_flagged` when the caller must react
    to that case.
    """
    vec, _ = l2_normalize_flagged(v)
    return vec


def l2_normalize_flagged(v) -> tuple[np.ndarray, bool]:
    """Like :func:`l2_normalize` but also reports whether the input was zero."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_EPS:
        return np.zeros_like(arr), True
    return arr / norm, False


def normalize_rows(m) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit normalization. Returns (normalized, zero_row_mask)."""
    arr = as_matrix(m)
    norms = np.linalg.norm(arr, axis=1)
    zero = norms < ZERO_NORM_EPS
    safe = np.where(zero, 1.0, norms)
    out = arr / safe[:, None]
    out[zero] = 0.0
    return out, zero


def cosine_sim(a, b) -> float:
    """Dot product of unit (or zero-padded) vectors of equal dimension."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimMismatch(f"dims differ: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.dot(va, vb))


def masked_softmax(logits, mask=None) -> np.ndarray:
    """Numerically stable softmax over the unmasked entries.

    Masked entries (mask False) get probability exactly 0; the rest are
    positive and sum to 1. Raises :class:`AllMasked` if nothing survives.
    """
    arr = as_vector(logits)
    if mask is None:
        keep = np.ones(arr.shape[0], dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != arr.shape:
            raise DimMismatch("logits and mask lengths differ")
    if not keep.any():
        raise AllMasked("all entries masked out of softmax")
    out = np.zeros_like(arr)
    kept = arr[keep]
    kept = kept - kept.max()
    e = np.exp(kept)
    out[keep] = e / e.sum()
    return out


def pairwise_sim(a, b) -> np.ndarray:
    """All-pairs dot products: entry (i, j) = A_i . B_j."""
    ma = as_matrix(a)
    mb = as_matrix(b)
    if ma.shape[1] != mb.shape[1]:
        raise DimMismatch(f"dims differ: {ma.shape[1]} vs {mb.shape[1]}")
    return ma @ mb.T
