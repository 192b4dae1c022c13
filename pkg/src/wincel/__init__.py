"""Weighted contrastive alignment of image embeddings with noisy sentence sets.

Subpackages cover the losses and their baselines, a small training engine
over frozen features, zero-shot evaluation, the occurrence/article dataset
pipeline, similarity rasters, and a CLI tying them together.
"""

__version__ = "0.1.0"

from .kernels import ACTIVE_BACKEND, NUMBA_AVAILABLE  # noqa: F401
