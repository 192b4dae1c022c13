"""Training engine: a trainable projection over frozen visual features.

The trainable surface is a single linear map (optionally with bias) whose
unit-normalized output feeds the contrastive losses; the text side stays
frozen. Includes a from-scratch AdamW with decoupled weight decay, a step
learning-rate scheduler, K-sentence batch assembly with zero padding, the
epoch loop for every loss strategy, a supervised linear probe, checkpoint
serialization, and a finite-difference gradient checker that exercises the
full chain (loss -> normalization -> projection).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, losses
from .errors import (
    CorruptFile,
    DegenerateLabels,
    EmptySentenceSet,
    ValidationError,
    ZeroNorm,
)
from .io import canonical_json
from .linalg import as_matrix

logger = logging.getLogger(__name__)

LOSS_KINDS = (
    "infonce",
    "wincel",
    "bootstrap_hard",
    "bootstrap_soft",
    "top1",
    "top_p",
    "substring_aug",
)

# Temperatures from the published training recipe; bootstrap mixing weights
# follow the same source (0.9 hard / 0.8 soft).
DEFAULT_TAU_WINCEL = 0.15
DEFAULT_TAU_INFONCE = 0.07
DEFAULT_BETA = {"bootstrap_hard": 0.9, "bootstrap_soft": 0.8}


@dataclass
class TrainConfig:
    """Every training hyperparameter in one validated structure.

    ``tau`` and ``beta`` default to None and resolve per loss kind
    (0.15 for the weighted loss, 0.07 otherwise; beta 0.9 hard / 0.8 soft).
    ``weight_decay``, the Adam betas, and the sentence-subsampling policy
    are not part of the published recipe; the defaults here are
    conventional choices.
    """

    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 60
    k: int = 15
    tau: float | None = None
    weight_decay: float = 0.01
    scheduler_step: int = 2
    scheduler_gamma: float = 0.95
    loss_kind: str = "wincel"
    beta: float | None = None
    seed: int = 0
    pad_mode: str = "paper_literal"
    alpha_grad: str = "full"
    alpha_tau: float | None = None
    symmetric: bool = False
    normalize_g: bool = False
    use_bias: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 for contrastive losses")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not 0 < self.scheduler_gamma <= 1:
            raise ValidationError(f"scheduler_gamma must be in (0, 1], got {self.scheduler_gamma}")
        if self.scheduler_step < 1:
            raise ValidationError(f"scheduler_step must be >= 1, got {self.scheduler_step}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")

    @property
    def effective_tau(self) -> float:
        if self.tau is not None:
            return self.tau
        return DEFAULT_TAU_WINCEL if self.loss_kind == "wincel" else DEFAULT_TAU_INFONCE

    @property
    def effective_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return DEFAULT_BETA.get(self.loss_kind, 0.9)

    def wincel_params(self) -> losses.WincelParams:
        return losses.WincelParams(
            tau=self.effective_tau,
            pad_mode=self.pad_mode,
            alpha_grad=self.alpha_grad,
            alpha_tau=self.alpha_tau,
            symmetric=self.symmetric,
            normalize_g=self.normalize_g,
        )

    def config_hash(self) -> bytes:
        import hashlib

        return hashlib.sha256(canonical_json(asdict(self)).encode("utf-8")).digest()


@dataclass
class ProjectionHead:
    """Linear map over frozen features; forward output is unit-normalized."""

    W: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValidationError(f"W must be 2-D (d_in, d_out), got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ValidationError("W contains NaN or Inf")
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.W.shape[1],):
                raise ValidationError("bias shape must be (d_out,)")

    @classmethod
    def initialize(cls, d_in: int, d_out: int, rng: np.random.Generator, use_bias: bool = False):
        w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        b = np.zeros(d_out) if use_bias else None
        return cls(W=w, bias=b)

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(W=self.W.copy(), bias=None if self.bias is None else self.bias.copy())

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]


def forward_batch(head: ProjectionHead, X) -> tuple[np.ndarray, dict]:
    """Project rows of X and unit-normalize; cache intermediates for backward."""
    X = np.ascontiguousarray(as_matrix(X, dim=head.d_in))
    Y = X @ head.W
    if head.bias is not None:
        Y = Y + head.bias
    norms = np.linalg.norm(Y, axis=1)
    if norms.min() < 1e-12:
        raise ZeroNorm("projected vector has (near-)zero norm")
    V = Y / norms[:, None]
    return V, {"X": X, "V": V, "norms": norms, "W": head.W, "has_bias": head.bias is not None}


def backward_batch(cache: dict, grad_V) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Gradients of any scalar through the normalized projection.

    Chain rule through v = y/|y|: dL/dy = (g - (g.v) v)/|y|.
    Returns (grad_W, grad_bias, grad_X).
    """
    g = np.asarray(grad_V, dtype=np.float64)
    V, norms, X = cache["V"], cache["norms"], cache["X"]
    gy = (g - (g * V).sum(axis=1, keepdims=True) * V) / norms[:, None]
    grad_W = X.T @ gy
    grad_b = gy.sum(axis=0) if cache["has_bias"] else None
    grad_X = gy @ cache["W"].T
    return grad_W, grad_b, grad_X


def forward_visual(head: ProjectionHead, x) -> tuple[np.ndarray, dict]:
    """Single-vector convenience wrapper around :func:`forward_batch`."""
    V, cache = forward_batch(head, np.asarray(x, dtype=np.float64)[None, :])
    return V[0], cache


def backward_visual(cache: dict, grad_V) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    grad_W, grad_b, grad_X = backward_batch(cache, np.asarray(grad_V, dtype=np.float64)[None, :])
    return grad_W, grad_b, grad_X[0]


@dataclass
class AdamWState:
    """Per-parameter first/second moment buffers plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update, in place, with decoupled weight decay and bias correction."""
    state.step += 1
    for name in sorted(params):
        kernels.adamw_update(
            params[name], grads[name], state.m[name], state.v[name],
            state.step, lr, beta1, beta2, eps, weight_decay,
        )
    return params, state


def scheduler_lr(config: TrainConfig, epoch: int) -> float:
    """Step decay: lr * gamma^floor(epoch / step)."""
    if epoch < 0:
        raise ValidationError(f"epoch must be >= 0, got {epoch}")
    return config.lr * config.scheduler_gamma ** (epoch // config.scheduler_step)


@dataclass
class TripletRecord:
    """One tile on the training side: frozen features plus sentence references."""

    tile_id: str
    features: np.ndarray
    sentence_ids: list[int]
    label: int
    row: int
    split: str = "train"


@dataclass
class TrainData:
    """Everything fit() consumes: records, the sentence bank, and geometry."""

    records: list[TripletRecord]
    sentence_embeds: np.ndarray  # (S, D) unit rows, float64
    sentence_texts: list[str] | None = None
    val_records: list[TripletRecord] = field(default_factory=list)

    @property
    def d_in(self) -> int:
        return int(self.records[0].features.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.sentence_embeds.shape[1])


def draw_sentence_ids(
    records: list[TripletRecord],
    k: int,
    rng: np.random.Generator | None = None,
    seed_ctx: tuple[int, int] | None = None,
) -> list[list[int]]:
    """Per-record sentence ids for one batch: all of them, or k drawn
    without replacement when more are available.

    With ``seed_ctx=(seed, epoch)`` each record's draw reseeds from
    (seed, epoch, record.row) so epochs vary but runs reproduce.
    """
    out = []
    for rec in records:
        ids = rec.sentence_ids
        if not ids:
            raise EmptySentenceSet(f"record {rec.tile_id} has no sentences")
        if len(ids) > k:
            if seed_ctx is not None:
                rec_rng = np.random.default_rng([seed_ctx[0], seed_ctx[1], rec.row])
            elif rng is not None:
                rec_rng = rng
            else:
                raise ValidationError("need rng or seed_ctx to subsample sentences")
            chosen = rec_rng.choice(len(ids), size=k, replace=False)
            ids = [ids[int(c)] for c in chosen]
        out.append(list(ids))
    return out


def batch_from_ids(
    records: list[TripletRecord],
    ids_list: list[list[int]],
    sentence_embeds: np.ndarray,
    k: int,
) -> tuple[np.ndarray, losses.SentenceBatch, np.ndarray]:
    """Stack features and build the (N, K, D) zero-padded sentence tensor."""
    n = len(records)
    dim = sentence_embeds.shape[1]
    X = np.stack([r.features for r in records]).astype(np.float64)
    T = np.zeros((n, k, dim), dtype=np.float64)
    mask = np.zeros((n, k), dtype=bool)
    labels = np.array([r.label for r in records], dtype=np.int64)
    for i, ids in enumerate(ids_list):
        T[i, : len(ids)] = sentence_embeds[ids]
        mask[i, : len(ids)] = True
    return X, losses.SentenceBatch(T=T, pad_mask=mask), labels


def assemble_batch(
    records: list[TripletRecord],
    sentence_embeds: np.ndarray,
    k: int,
    rng: np.random.Generator | None = None,
    seed_ctx: tuple[int, int] | None = None,
) -> tuple[np.ndarray, losses.SentenceBatch, np.ndarray]:
    """Features, padded sentence tensor, and labels for one batch.

    Records with more than ``k`` sentences are subsampled without
    replacement (seeded); fewer are zero-padded with pad_mask False.
    """
    if not records:
        raise ValidationError("cannot assemble an empty batch")
    ids_list = draw_sentence_ids(records, k, rng=rng, seed_ctx=seed_ctx)
    return batch_from_ids(records, ids_list, sentence_embeds, k)


def _real_indices(mask_row: np.ndarray) -> np.ndarray:
    return np.flatnonzero(mask_row)


def _select_rows(sb: losses.SentenceBatch, idx: np.ndarray) -> np.ndarray:
    return sb.T[np.arange(sb.n), idx]


def _batch_loss(
    V: np.ndarray,
    sb: losses.SentenceBatch,
    config: TrainConfig,
    rng: np.random.Generator,
    texts_for: "callable | None" = None,
    provider=None,
    frozen: dict | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss dispatch for one batch: (value, per_sample, grad_V).

    Sentence selections, bootstrap targets, and augmented-text embeddings
    are treated as constants of the step (no gradient flows through them);
    ``frozen`` lets the gradient checker pin them across evaluations.
    """
    kind = config.loss_kind
    tau = config.effective_tau
    if kind == "wincel":
        out = losses.wincel(V, sb, config.wincel_params())
        return out.value, out.per_sample, out.grad_V

    frozen = frozen if frozen is not None else {}
    if kind in ("infonce", "bootstrap_hard", "bootstrap_soft"):
        if "pick" in frozen:
            pick = frozen["pick"]
        else:
            pick = np.array(
                [rng.choice(_real_indices(sb.pad_mask[i])) for i in range(sb.n)]
            )
            frozen["pick"] = pick
        T_sel = _select_rows(sb, pick)
        if kind == "infonce":
            out = losses.info_nce(V, T_sel, tau, symmetric=config.symmetric)
            return out.value, out.per_sample, out.grad_V
        logits = (V @ T_sel.T) / tau
        if "targets" in frozen:
            targets = frozen["targets"]
        else:
            mode = "hard" if kind == "bootstrap_hard" else "soft"
            targets = losses.bootstrap_targets(logits, config.effective_beta, mode)
            frozen["targets"] = targets
        out = losses.soft_cross_entropy(logits, targets)
        grad_V = (out.grad_V @ T_sel) / tau
        return out.value, out.per_sample, grad_V

    if kind == "top1":
        if "pick" in frozen:
            pick = frozen["pick"]
        else:
            pick = np.array(
                [losses.select_top1(V[i], sb.T[i], sb.pad_mask[i]) for i in range(sb.n)]
            )
            frozen["pick"] = pick
        out = losses.info_nce(V, _select_rows(sb, pick), tau, symmetric=config.symmetric)
        return out.value, out.per_sample, out.grad_V

    if kind == "top_p":
        if "pick" in frozen:
            pick = frozen["pick"]
        else:
            pick = np.array(
                [losses.sample_top_p(V[i], sb.T[i], sb.pad_mask[i], tau, rng) for i in range(sb.n)]
            )
            frozen["pick"] = pick
        out = losses.info_nce(V, _select_rows(sb, pick), tau, symmetric=config.symmetric)
        return out.value, out.per_sample, out.grad_V

    if kind == "substring_aug":
        if "aug_T" in frozen:
            T_sel = frozen["aug_T"]
        else:
            if texts_for is None or provider is None:
                raise ValidationError("substring_aug needs sentence texts and an embed provider")
            pick = [int(rng.choice(_real_indices(sb.pad_mask[i]))) for i in range(sb.n)]
            aug_texts = []
            for i, p in enumerate(pick):
                words = texts_for(i, p).split()
                aug_texts.append(" ".join(losses.substring_augment(words, rng)))
            T_sel = provider.embed_texts(aug_texts)
            frozen["aug_T"] = T_sel
        out = losses.info_nce(V, T_sel, tau, symmetric=config.symmetric)
        return out.value, out.per_sample, out.grad_V

    raise ValidationError(f"unknown loss kind {kind!r}")


@dataclass
class Checkpoint:
    """Serializable training snapshot; round-trips byte-exactly."""

    W: np.ndarray
    bias: np.ndarray | None
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    epoch: int
    config_hash: bytes
    history: list[tuple[int, float, float]]

    def head(self) -> ProjectionHead:
        return ProjectionHead(W=self.W.copy(), bias=None if self.bias is None else self.bias.copy())

    def to_bytes(self) -> bytes:
        parts = [b"WNCK", struct.pack("<I", 1)]
        payload = bytearray()
        payload += struct.pack("<32s", self.config_hash)
        payload += struct.pack("<I", self.epoch)
        d_in, d_out = self.W.shape
        has_bias = self.bias is not None
        payload += struct.pack("<IIB", d_in, d_out, 1 if has_bias else 0)
        payload += self.W.astype("<f8").tobytes()
        if has_bias:
            payload += self.bias.astype("<f8").tobytes()
        payload += struct.pack("<Q", self.step)
        for name in ("W", "bias") if has_bias else ("W",):
            payload += self.m[name].astype("<f8").tobytes()
            payload += self.v[name].astype("<f8").tobytes()
        payload += struct.pack("<I", len(self.history))
        for epoch, loss, lr in self.history:
            payload += struct.pack("<Idd", epoch, loss, lr)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(bytes(payload))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if len(blob) < 16 or blob[:4] != b"WNCK":
            raise CorruptFile("bad checkpoint magic")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != 1:
            raise CorruptFile(f"unsupported checkpoint version {version}")
        (plen,) = struct.unpack_from("<Q", blob, 8)
        payload = blob[16:]
        if len(payload) != plen:
            raise CorruptFile("checkpoint payload length mismatch")
        off = 0
        (config_hash,) = struct.unpack_from("<32s", payload, off)
        off += 32
        (epoch,) = struct.unpack_from("<I", payload, off)
        off += 4
        d_in, d_out, has_bias = struct.unpack_from("<IIB", payload, off)
        off += 9

        def take(count):
            nonlocal off
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).copy()
            off += count * 8
            return arr

        W = take(d_in * d_out).reshape(d_in, d_out)
        bias = take(d_out) if has_bias else None
        (step,) = struct.unpack_from("<Q", payload, off)
        off += 8
        m, v = {}, {}
        m["W"] = take(d_in * d_out).reshape(d_in, d_out)
        v["W"] = take(d_in * d_out).reshape(d_in, d_out)
        if has_bias:
            m["bias"] = take(d_out)
            v["bias"] = take(d_out)
        (n_hist,) = struct.unpack_from("<I", payload, off)
        off += 4
        history = []
        for _ in range(n_hist):
            e, loss, lr = struct.unpack_from("<Idd", payload, off)
            off += 20
            history.append((e, loss, lr))
        if off != plen:
            raise CorruptFile("checkpoint has trailing bytes")
        return cls(W=W, bias=bias, m=m, v=v, step=step, epoch=epoch,
                   config_hash=config_hash, history=history)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


def _params_of(head: ProjectionHead) -> dict[str, np.ndarray]:
    params = {"W": head.W}
    if head.bias is not None:
        params["bias"] = head.bias
    return params


def fit(
    dataset: TrainData,
    config: TrainConfig,
    embed_provider=None,
    head: ProjectionHead | None = None,
) -> tuple[Checkpoint, list[tuple[int, float, float]]]:
    """Run the full training loop; deterministic given the config seed.

    Single-sample batch remainders are dropped (contrastive losses need
    N >= 2). When the dataset carries a validation split its loss is logged
    per epoch but kept out of the returned history.
    """
    if not dataset.records:
        raise ValidationError("dataset is empty")
    if head is None:
        head = ProjectionHead.initialize(
            dataset.d_in, dataset.d_out, np.random.default_rng([config.seed, 0]), config.use_bias
        )
    else:
        head = head.copy()
    params = _params_of(head)
    state = AdamWState.for_params(params)
    history: list[tuple[int, float, float]] = []

    n = len(dataset.records)
    for epoch in range(config.epochs):
        lr = scheduler_lr(config, epoch)
        order = _epoch_order(config.seed, epoch, n)
        total_loss = 0.0
        total_count = 0
        for b_start in range(0, n, config.batch_size):
            batch_idx = order[b_start : b_start + config.batch_size]
            if batch_idx.shape[0] < 2:
                continue
            records = [dataset.records[int(i)] for i in batch_idx]
            rng = np.random.default_rng([config.seed, 2, epoch, b_start])
            ids_list = draw_sentence_ids(records, config.k, seed_ctx=(config.seed, epoch))
            X, sb, _ = batch_from_ids(records, ids_list, dataset.sentence_embeds, config.k)
            texts_for = None
            if dataset.sentence_texts is not None:
                texts = dataset.sentence_texts

                def texts_for(i, k_idx, _ids=ids_list, _texts=texts):
                    return _texts[_ids[i][k_idx]]

            V, cache = forward_batch(head, X)
            value, per, grad_V = _batch_loss(
                V, sb, config, rng,
                texts_for=texts_for,
                provider=embed_provider,
            )
            grad_W, grad_b, _ = backward_batch(cache, grad_V)
            grads = {"W": grad_W}
            if head.bias is not None:
                grads["bias"] = grad_b
            adamw_step(
                params, grads, state, lr,
                beta1=config.adam_beta1, beta2=config.adam_beta2,
                eps=config.adam_eps, weight_decay=config.weight_decay,
            )
            total_loss += float(per.sum())
            total_count += per.shape[0]
        mean_loss = total_loss / total_count if total_count else float("nan")
        history.append((epoch, mean_loss, lr))
        if dataset.val_records:
            val_loss = evaluate_loss(dataset.val_records, dataset, config, head, epoch, provider=embed_provider)
            logger.info("epoch %d mean_loss %.6f lr %.3g val_loss %.6f", epoch, mean_loss, lr, val_loss)
        else:
            logger.info("epoch %d mean_loss %.6f lr %.3g", epoch, mean_loss, lr)

    checkpoint = Checkpoint(
        W=head.W.copy(),
        bias=None if head.bias is None else head.bias.copy(),
        m={k: v.copy() for k, v in state.m.items()},
        v={k: v.copy() for k, v in state.v.items()},
        step=state.step,
        epoch=config.epochs,
        config_hash=config.config_hash(),
        history=list(history),
    )
    return checkpoint, history


def evaluate_loss(
    records,
    dataset: TrainData,
    config: TrainConfig,
    head: ProjectionHead,
    epoch: int = 0,
    provider=None,
) -> float:
    """Mean per-sample loss over ``records`` without updating anything."""
    total, count = 0.0, 0
    for b_start in range(0, len(records), config.batch_size):
        batch = records[b_start : b_start + config.batch_size]
        if len(batch) < 2:
            continue
        ids_list = draw_sentence_ids(batch, config.k, seed_ctx=(config.seed, epoch))
        X, sb, _ = batch_from_ids(batch, ids_list, dataset.sentence_embeds, config.k)
        texts_for = None
        if dataset.sentence_texts is not None:
            def texts_for(i, k_idx, _ids=ids_list, _texts=dataset.sentence_texts):
                return _texts[_ids[i][k_idx]]
        V, _ = forward_batch(head, X)
        rng = np.random.default_rng([config.seed, 3, epoch, b_start])
        value, per, _ = _batch_loss(V, sb, config, rng, texts_for=texts_for, provider=provider)
        total += float(per.sum())
        count += per.shape[0]
    return total / count if count else float("nan")


@dataclass
class LinearProbe:
    """Multinomial logistic regression weights over frozen features."""

    W: np.ndarray  # (d, c)
    bias: np.ndarray  # (c,)

    def predict(self, X) -> np.ndarray:
        logits = as_matrix(X, dim=self.W.shape[0]) @ self.W + self.bias
        return logits.argmax(axis=1)

    def accuracy(self, X, labels) -> float:
        return float((self.predict(X) == np.asarray(labels)).mean())


def train_linear_probe(X, labels, num_classes: int, config: TrainConfig) -> LinearProbe:
    """Supervised upper bound: cross-entropy on frozen features with AdamW.

    Full-batch; ``config.epochs`` steps at ``config.lr``. Weights start at
    zero, so zero epochs mean uniform logits (predicts class 0 everywhere).
    """
    X = as_matrix(X)
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValidationError("labels must be 1-D and match X rows")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValidationError("labels out of range [0, num_classes)")
    if np.unique(y).shape[0] < 2:
        raise DegenerateLabels("need at least two distinct classes")
    n, d = X.shape
    params = {"W": np.zeros((d, num_classes)), "bias": np.zeros(num_classes)}
    state = AdamWState.for_params(params)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    for epoch in range(config.epochs):
        logits = X @ params["W"] + params["bias"]
        mx = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - mx)
        probs = e / e.sum(axis=1, keepdims=True)
        gz = (probs - onehot) / n
        grads = {"W": X.T @ gz, "bias": gz.sum(axis=0)}
        adamw_step(params, grads, state, scheduler_lr(config, epoch),
                   beta1=config.adam_beta1, beta2=config.adam_beta2,
                   eps=config.adam_eps, weight_decay=config.weight_decay)
    return LinearProbe(W=params["W"], bias=params["bias"])


def finite_diff_check(
    loss_kind: str,
    head: ProjectionHead,
    batch: tuple[np.ndarray, losses.SentenceBatch],
    step: float = 1e-5,
    config: TrainConfig | None = None,
    provider=None,
    texts: list[list[str]] | None = None,
    rng: np.random.Generator | None = None,
    max_entries: int = 100,
    _corruption: float = 0.0,
) -> float:
    """Max scale-relative error between analytic and central-difference grads.

    Perturbs projection weights entry by entry (random ``max_entries``
    subset for large heads), recomputing the forward pass and loss each
    time. Discrete choices (sentence picks, bootstrap targets, augmented
    embeddings) and, in stop-gradient mode, the sentence weights are frozen
    at the unperturbed point, matching what the analytic gradient treats as
    constant. ``_corruption`` is a test hook that scales the largest
    analytic gradient entry to verify the check can fail.
    """
    if config is None:
        config = TrainConfig(loss_kind=loss_kind, batch_size=2, epochs=0)
    elif config.loss_kind != loss_kind:
        raise ValidationError("config.loss_kind must match loss_kind")
    rng = rng if rng is not None else np.random.default_rng(0)
    X, sb = batch

    frozen: dict = {}
    texts_for = None
    if texts is not None:
        def texts_for(i, k_idx):
            return texts[i][k_idx]

    stop_alpha = loss_kind == "wincel" and config.alpha_grad == "stop_gradient"

    def loss_value(theta_W, theta_b):
        h = ProjectionHead(W=theta_W, bias=theta_b)
        V, _ = forward_batch(h, X)
        if stop_alpha:
            if "alpha" not in frozen:
                out0 = losses.wincel(V, sb, config.wincel_params())
                frozen["alpha"] = out0.aux_alpha
            alpha = frozen["alpha"]
            g_text = np.einsum("nk,nkd->nd", alpha, sb.T)
            if config.normalize_g:
                g_text = g_text / np.linalg.norm(g_text, axis=1, keepdims=True)
            out = losses.info_nce(V, g_text, config.effective_tau, symmetric=config.symmetric)
            return out.value
        value, _, _ = _batch_loss(V, sb, config, rng, texts_for=texts_for,
                                  provider=provider, frozen=frozen)
        return value

    # Analytic gradient at the base point (same frozen context).
    V0, cache = forward_batch(head, X)
    if stop_alpha:
        loss_value(head.W, head.bias)  # populate frozen alpha
        alpha = frozen["alpha"]
        g_text = np.einsum("nk,nkd->nd", alpha, sb.T)
        if config.normalize_g:
            g_text = g_text / np.linalg.norm(g_text, axis=1, keepdims=True)
        out = losses.info_nce(V0, g_text, config.effective_tau, symmetric=config.symmetric)
        grad_V = out.grad_V
    else:
        _, _, grad_V = _batch_loss(V0, sb, config, rng, texts_for=texts_for,
                                   provider=provider, frozen=frozen)
    grad_W, grad_b, _ = backward_batch(cache, grad_V)

    analytic = [grad_W.ravel()]
    if head.bias is not None:
        analytic.append(grad_b.ravel())
    analytic = np.concatenate(analytic)
    if _corruption:
        analytic = analytic.copy()
        worst = int(np.argmax(np.abs(analytic)))
        analytic[worst] *= 1.0 + _corruption

    n_w = head.W.size
    total = n_w + (head.bias.size if head.bias is not None else 0)
    if total > max_entries:
        check_rng = np.random.default_rng([12345, total])
        entries = np.sort(check_rng.choice(total, size=max_entries, replace=False))
    else:
        entries = np.arange(total)

    gmax = float(np.abs(analytic).max())
    max_err = 0.0
    for idx in entries:
        w_plus, w_minus = head.W.copy(), head.W.copy()
        b_plus = head.bias.copy() if head.bias is not None else None
        b_minus = head.bias.copy() if head.bias is not None else None
        if idx < n_w:
            w_plus.ravel()[idx] += step
            w_minus.ravel()[idx] -= step
        else:
            b_plus[idx - n_w] += step
            b_minus[idx - n_w] -= step
        fd = (loss_value(w_plus, b_plus) - loss_value(w_minus, b_minus)) / (2 * step)
        an = analytic[idx]
        denom = max(abs(an), abs(fd), 1e-3 * gmax, 1e-8)
        max_err = max(max_err, abs(fd - an) / denom)
    return float(max_err)
