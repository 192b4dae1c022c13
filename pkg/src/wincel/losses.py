"""Contrastive losses and noisy-pair baseline strategies.

Covers the matched-pair InfoNCE loss, the weighted variant that softmax-
weights each sample's candidate sentences by cross-modal similarity, the
bootstrapped soft/hard target construction, greedy and stochastic sentence
selection, and word-window text augmentation. Every loss returns its value,
per-sample losses, and the analytic gradient of the value with respect to
the visual embeddings.

Hot paths run through :mod:`wincel.kernels`; the ablation flags
(``symmetric``, ``normalize_g``) use a general numpy path kept here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    AllMasked,
    BetaOutOfRange,
    DimMismatch,
    TemperatureNonPositive,
    ZeroNorm,
)
from .linalg import as_matrix, as_vector, masked_softmax

PAD_MODES = ("paper_literal", "masked")
ALPHA_GRAD_MODES = ("full", "stop_gradient")


@dataclass
class WincelParams:
    """Temperature and padding/gradient behavior for the weighted loss.

    ``pad_mode='paper_literal'`` lets padded (all-zero) sentences enter the
    weight softmax with logit 0, shrinking the combined text vector;
    ``'masked'`` renormalizes weights over real sentences only.
    ``alpha_tau`` overrides the weight-softmax temperature (defaults to
    ``tau``). ``symmetric`` averages both retrieval directions and
    ``normalize_g`` unit-normalizes the combined text vector; both are
    ablation flags, default off.
    """

    tau: float = 0.15
    pad_mode: str = "paper_literal"
    alpha_grad: str = "full"
    alpha_tau: float | None = None
    symmetric: bool = False
    normalize_g: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise TemperatureNonPositive(f"tau must be > 0, got {self.tau}")
        if self.alpha_tau is not None and not self.alpha_tau > 0:
            raise TemperatureNonPositive(f"alpha_tau must be > 0, got {self.alpha_tau}")
        if self.pad_mode not in PAD_MODES:
            raise ValueError(f"pad_mode must be one of {PAD_MODES}")
        if self.alpha_grad not in ALPHA_GRAD_MODES:
            raise ValueError(f"alpha_grad must be one of {ALPHA_GRAD_MODES}")

    @property
    def effective_alpha_tau(self) -> float:
        return self.tau if self.alpha_tau is None else self.alpha_tau


@dataclass
class SentenceBatch:
    """Per-sample candidate sentence embeddings with a padding mask.

    ``T`` is (N, K, D); ``pad_mask`` is (N, K) with True marking real
    sentences. Real rows must be unit-norm within 1e-4, padded rows exactly
    zero, and every sample needs at least one real sentence.
    """

    T: np.ndarray
    pad_mask: np.ndarray

    def __post_init__(self):
        self.T = np.ascontiguousarray(self.T, dtype=np.float64)
        self.pad_mask = np.ascontiguousarray(self.pad_mask, dtype=bool)
        if self.T.ndim != 3:
            raise DimMismatch(f"T must be (N, K, D), got shape {self.T.shape}")
        if self.pad_mask.shape != self.T.shape[:2]:
            raise DimMismatch("pad_mask shape must match T's first two dims")
        if not np.all(np.isfinite(self.T)):
            raise ValueError("sentence embeddings contain NaN or Inf")
        if not self.pad_mask.any(axis=1).all():
            raise AllMasked("every sample needs at least one real sentence")
        norms = np.linalg.norm(self.T, axis=2)
        real = self.pad_mask
        if real.any() and np.abs(norms[real] - 1.0).max() > 1e-4:
            raise ValueError("real sentence rows must be unit-norm within 1e-4")
        if (~real).any() and norms[~real].max() != 0.0:
            raise ValueError("padded sentence rows must be exactly zero")

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def k(self) -> int:
        return self.T.shape[1]

    @property
    def dim(self) -> int:
        return self.T.shape[2]


@dataclass
class LossOutput:
    """Loss value, per-sample losses, and gradient of the value.

    ``grad_V`` is with respect to the visual embeddings for the contrastive
    losses and with respect to the logits for :func:`soft_cross_entropy`.
    ``aux_alpha`` holds the sentence weights as used: they sum to 1 over
    real entries in masked mode and over all K entries in literal mode.
    """

    value: float
    per_sample: np.ndarray
    grad_V: np.ndarray
    aux_alpha: np.ndarray | None = field(default=None)


def _check_pair(V, T, tau) -> tuple[np.ndarray, np.ndarray]:
    if not tau > 0:
        raise TemperatureNonPositive(f"tau must be > 0, got {tau}")
    V = np.ascontiguousarray(as_matrix(V))
    T = np.ascontiguousarray(as_matrix(T))
    if V.shape != T.shape:
        raise DimMismatch(f"V and T shapes differ: {V.shape} vs {T.shape}")
    if V.shape[0] < 1:
        raise DimMismatch("need at least one sample")
    return V, T


def info_nce(V, T, tau: float, symmetric: bool = False) -> LossOutput:
    """Matched-pair contrastive loss over in-batch negatives.

    per_sample[n] = -log( exp(V_n.T_n/tau) / sum_j exp(V_n.T_j/tau) ).
    With ``symmetric`` the text-to-image direction is averaged in.
    """
    V, T = _check_pair(V, T, tau)
    value, per, grad = kernels.infonce_forward_grad(V, T, tau)
    if symmetric:
        n = V.shape[0]
        logits = (T @ V.T) / tau
        mx = logits.max(axis=1)
        lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
        per_b = lse - np.diagonal(logits)
        probs = np.exp(logits - lse[:, None])
        grad_b = ((probs - np.eye(n)).T @ T) / (n * tau)
        value = 0.5 * (value + float(per_b.mean()))
        per = 0.5 * (per + per_b)
        grad = 0.5 * (grad + grad_b)
    return LossOutput(value=value, per_sample=per, grad_V=grad)


def sentence_weights(V_n, T_n, pad_mask, params: WincelParams) -> np.ndarray:
    """Per-sentence weights for one sample: softmax of V.T_k over temperature.

    In masked mode padded entries are excluded and the weights renormalize
    over real sentences; in literal mode padded entries participate with
    logit 0 (their features are zero).
    """
    v = as_vector(V_n)
    t = as_matrix(T_n, dim=v.shape[0])
    mask = np.asarray(pad_mask, dtype=bool)
    if mask.shape[0] != t.shape[0]:
        raise DimMismatch("pad_mask length must match sentence count")
    raw = (t @ v) / params.effective_alpha_tau
    if params.pad_mode == "paper_literal":
        return masked_softmax(raw)
    return masked_softmax(raw, mask)


def weighted_text_repr(alpha, T_n) -> np.ndarray:
    """Linear combination of sentence embeddings; intentionally not re-normalized."""
    a = as_vector(alpha)
    t = as_matrix(T_n)
    if a.shape[0] != t.shape[0]:
        raise DimMismatch("weight count must match sentence count")
    return a @ t


def _wincel_general(V, batch: SentenceBatch, params: WincelParams):
    """Numpy path covering the symmetric / normalize_g ablation flags."""
    n = V.shape[0]
    tau = params.tau
    a_tau = params.effective_alpha_tau
    raw = np.einsum("nkd,nd->nk", batch.T, V) / a_tau
    alpha = kernels._alpha_numpy(raw, batch.pad_mask, params.pad_mode == "paper_literal")
    g0 = np.einsum("nk,nkd->nd", alpha, batch.T)
    if params.normalize_g:
        g_norms = np.linalg.norm(g0, axis=1)
        if g_norms.min() < 1e-12:
            raise ZeroNorm("combined text vector collapsed to zero")
        g = g0 / g_norms[:, None]
    else:
        g = g0

    w = 0.5 if params.symmetric else 1.0
    logits = (V @ g.T) / tau
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    per = lse - np.diagonal(logits)
    probs = np.exp(logits - lse[:, None])
    q = w * (probs - np.eye(n)) / (n * tau)
    grad = q @ g
    u = q.T @ V

    if params.symmetric:
        logits2 = (g @ V.T) / tau
        mx2 = logits2.max(axis=1)
        lse2 = mx2 + np.log(np.exp(logits2 - mx2[:, None]).sum(axis=1))
        per2 = lse2 - np.diagonal(logits2)
        probs2 = np.exp(logits2 - lse2[:, None])
        q2 = 0.5 * (probs2 - np.eye(n)) / (n * tau)
        grad = grad + q2.T @ g
        u = u + q2 @ V
        per = 0.5 * (per + per2)

    if params.alpha_grad == "full":
        if params.normalize_g:
            # Pull the downstream gradient back through g = g0/|g0|.
            u = (u - (u * g).sum(axis=1, keepdims=True) * g) / g_norms[:, None]
        c = np.einsum("nkd,nd->nk", batch.T, u)
        cbar = (alpha * c).sum(axis=1, keepdims=True)
        gk = alpha * (c - cbar)
        grad = grad + np.einsum("nk,nkd->nd", gk, batch.T) / a_tau
    return float(per.mean()), per, grad, alpha


def wincel(V, sentences: SentenceBatch, params: WincelParams) -> LossOutput:
    """Contrastive loss against softmax-weighted combinations of each
    sample's sentences.

    Per sample n the text side is G_n = sum_k alpha_{n,k} T_{n,k} with
    alpha = softmax_k(V_n.T_{n,k}/tau); the loss is InfoNCE of V against G.
    ``alpha_grad='full'`` differentiates through alpha, ``'stop_gradient'``
    treats it as constant.
    """
    if not params.tau > 0:
        raise TemperatureNonPositive(f"tau must be > 0, got {params.tau}")
    V = np.ascontiguousarray(as_matrix(V, dim=sentences.dim))
    if V.shape[0] != sentences.n:
        raise DimMismatch(f"batch sizes differ: V {V.shape[0]} vs sentences {sentences.n}")
    if params.symmetric or params.normalize_g:
        value, per, grad, alpha = _wincel_general(V, sentences, params)
    else:
        value, per, grad, alpha = kernels.wincel_forward_grad(
            V,
            sentences.T,
            sentences.pad_mask,
            params.tau,
            params.effective_alpha_tau,
            params.alpha_grad == "full",
            params.pad_mode == "paper_literal",
        )
    return LossOutput(value=value, per_sample=per, grad_V=grad, aux_alpha=alpha)


def bootstrap_targets(logits, beta: float, mode: str) -> np.ndarray:
    """Mix one-hot diagonal targets with the model posterior.

    soft: beta*I + (1-beta)*rowsoftmax(logits);
    hard: beta*I + (1-beta)*onehot(rowargmax(logits)).
    """
    if not 0.0 <= beta <= 1.0:
        raise BetaOutOfRange(f"beta must be in [0, 1], got {beta}")
    if mode not in ("hard", "soft"):
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    z = as_matrix(logits)
    n = z.shape[0]
    if z.shape[1] != n:
        raise DimMismatch("logits must be square (in-batch targets)")
    eye = np.eye(n)
    if mode == "soft":
        mx = z.max(axis=1, keepdims=True)
        e = np.exp(z - mx)
        posterior = e / e.sum(axis=1, keepdims=True)
    else:
        posterior = np.zeros_like(z)
        posterior[np.arange(n), z.argmax(axis=1)] = 1.0
    return beta * eye + (1.0 - beta) * posterior


def soft_cross_entropy(logits, targets) -> LossOutput:
    """Cross-entropy of row-softmaxed logits against soft target rows.

    ``grad_V`` holds the gradient with respect to the logits; with one-hot
    diagonal targets the per-sample values reduce to InfoNCE on the same
    logits.
    """
    z = as_matrix(logits)
    t = as_matrix(targets)
    if z.shape != t.shape:
        raise DimMismatch("logits and targets shapes differ")
    n = z.shape[0]
    mx = z.max(axis=1)
    lse = mx + np.log(np.exp(z - mx[:, None]).sum(axis=1))
    per = lse * t.sum(axis=1) - (t * z).sum(axis=1)
    probs = np.exp(z - lse[:, None])
    grad = (probs * t.sum(axis=1)[:, None] - t) / n
    return LossOutput(value=float(per.mean()), per_sample=per, grad_V=grad)


def _masked_sims(V_n, T_n, pad_mask):
    v = as_vector(V_n)
    t = as_matrix(T_n, dim=v.shape[0])
    mask = np.asarray(pad_mask, dtype=bool)
    if not mask.any():
        raise AllMasked("no real sentences to select from")
    return (t @ v), mask


def select_top1(V_n, T_n, pad_mask) -> int:
    """Index of the real sentence most similar to the image; ties break low."""
    sims, mask = _masked_sims(V_n, T_n, pad_mask)
    return int(np.argmax(np.where(mask, sims, -np.inf)))


def sample_top_p(V_n, T_n, pad_mask, tau: float, rng: np.random.Generator) -> int:
    """Draw a real sentence index with probability softmax(sims/tau)."""
    if not tau > 0:
        raise TemperatureNonPositive(f"tau must be > 0, got {tau}")
    sims, mask = _masked_sims(V_n, T_n, pad_mask)
    p = masked_softmax(sims / tau, mask)
    p = p / p.sum()
    return int(rng.choice(p.shape[0], p=p))


def substring_augment(words: list[str], rng: np.random.Generator) -> list[str]:
    """Uniform random contiguous window of 3 to 15 words; short inputs pass through."""
    n = len(words)
    if n <= 3:
        return list(words)
    length = int(rng.integers(3, min(15, n) + 1))
    start = int(rng.integers(0, n - length + 1))
    return list(words[start : start + length])
