import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wincel.linalg import normalize_rows
from wincel.losses import SentenceBatch


def random_unit_rows(rng, n, d):
    rows, _ = normalize_rows(rng.standard_normal((n, d)))
    return rows


def random_sentence_batch(rng, n, k, d, with_pads=True):
    """Random unit sentence rows; optionally zero-pads a random suffix per row."""
    T = rng.standard_normal((n, k, d))
    mask = np.ones((n, k), dtype=bool)
    if with_pads:
        for i in range(n):
            n_real = int(rng.integers(1, k + 1))
            mask[i, n_real:] = False
    for i in range(n):
        T[i], _ = normalize_rows(T[i])
    T[~mask] = 0.0
    return SentenceBatch(T=T, pad_mask=mask)


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)
