"""Synthetic desk-scale benchmark with a controlled false-positive regime.

Each class has one anchor direction in embedding space. A sample's frozen
visual feature is a fixed random linear map applied to a noisy copy of its
class anchor; its sentence set contains one informative embedding (near the
class anchor) buried among K-1 distractors drawn near other classes'
anchors. A random sentence is therefore usually wrong, which is exactly the
noise regime the weighted loss is built for. Class anchors double as the
zero-shot prompt embeddings.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .datapipe.manifest import SentenceBank, TileRecord, write_manifest
from .errors import ValidationError
from .io import write_embeddings, write_json
from .linalg import l2_normalize, normalize_rows
from .train import ProjectionHead


@dataclass
class SynthConfig:
    classes: int = 8
    n_train: int = 2000
    n_test: int = 500
    k: int = 8
    dim: int = 64
    informative_fraction: float = 1.0
    noise: float = 0.25
    seed: int = 42

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.k < 2:
            raise ValidationError("need at least 2 sentences per sample")
        if not 0.0 <= self.informative_fraction <= 1.0:
            raise ValidationError("informative_fraction must be in [0, 1]")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")


def class_name(c: int) -> str:
    return f"synthetic class {c}"


def warm_start_head(
    features: np.ndarray,
    latents: np.ndarray,
    seed: int,
    n_fit: int = 64,
    ridge: float = 10.0,
    noise: float = 4.0,
) -> ProjectionHead:
    """Weakly aligned head standing in for a pretrained backbone.

    The benchmark's comparison protocol fine-tunes every loss from the same
    starting point, like fine-tuning a pretrained encoder: a ridge fit of
    features onto oracle latents over the first ``n_fit`` rows, heavily
    perturbed so the starting zero-shot accuracy is modest.
    """
    rng = np.random.default_rng([seed, 99])
    X = np.asarray(features[:n_fit], dtype=np.float64)
    Y = np.asarray(latents[:n_fit], dtype=np.float64)
    d = X.shape[1]
    W = np.linalg.solve(X.T @ X + ridge * np.eye(d), X.T @ Y)
    W = W + noise * W.std() * rng.standard_normal(W.shape)
    return ProjectionHead(W=W)


def generate(config: SynthConfig, out_dir: str) -> dict:
    """Write the benchmark files; fully deterministic per seed.

    Outputs: features.eemb (pre-projection, unnormalized), latents.eemb
    (unit, the 'perfect head' oracle), sentences.eemb + bank.jsonl,
    manifest.jsonl (train/test splits), prompts.eemb (class anchors,
    sidecar = class names), classes.txt, meta.json.
    """
    rng = np.random.default_rng(config.seed)
    c, d, k = config.classes, config.dim, config.k
    anchors, _ = normalize_rows(rng.standard_normal((c, d)))
    mix = rng.standard_normal((d, d)) / np.sqrt(d)

    n_total = config.n_train + config.n_test
    features = np.zeros((n_total, d))
    latents = np.zeros((n_total, d))
    labels = np.zeros(n_total, dtype=int)
    sentence_rows: list[np.ndarray] = []
    sentence_texts: list[str] = []
    sentence_ids_per_sample: list[list[int]] = []

    for n in range(n_total):
        cls = n % c
        labels[n] = cls
        latent = l2_normalize(anchors[cls] + config.noise * rng.standard_normal(d))
        latents[n] = latent
        features[n] = mix @ latent

        informative = rng.random() < config.informative_fraction
        rows: list[np.ndarray] = []
        kinds: list[int] = []
        if informative:
            rows.append(l2_normalize(anchors[cls] + config.noise * rng.standard_normal(d)))
            kinds.append(cls)
        # Distractor classes are uniform over ALL classes: drawing them only
        # from other classes makes the class-conditional mean text exactly
        # class-independent (the informative pull cancels against the
        # anti-correlated distractors), leaving no learnable signal.
        while len(rows) < k:
            other = int(rng.integers(0, c))
            rows.append(l2_normalize(anchors[other] + config.noise * rng.standard_normal(d)))
            kinds.append(other)
        order = rng.permutation(k)
        ids = []
        for j in order:
            idx = len(sentence_rows)
            sentence_rows.append(rows[int(j)])
            sentence_texts.append(f"synthetic sentence {idx} near class {kinds[int(j)]}")
            ids.append(idx)
        sentence_ids_per_sample.append(ids)

    os.makedirs(out_dir, exist_ok=True)
    records = []
    for n in range(n_total):
        split = "train" if n < config.n_train else "test"
        records.append(
            TileRecord(
                tile_id=f"synth_{n:05d}",
                easting=float(n * 100),
                northing=0.0,
                species=[f"class_{labels[n]}"],
                sentence_ids=sentence_ids_per_sample[n],
                eunis_label=int(labels[n]),
                split=split,
            )
        )
    tile_ids = [r.tile_id for r in records]
    write_embeddings(os.path.join(out_dir, "features.eemb"), features, sources=tile_ids)
    write_embeddings(os.path.join(out_dir, "latents.eemb"), latents, sources=tile_ids)
    write_embeddings(
        os.path.join(out_dir, "sentences.eemb"), np.stack(sentence_rows), sources=sentence_texts
    )
    bank = SentenceBank(texts=sentence_texts)
    bank.save(os.path.join(out_dir, "bank.jsonl"))
    write_manifest(records, os.path.join(out_dir, "manifest.jsonl"))
    names = [class_name(i) for i in range(c)]
    write_embeddings(os.path.join(out_dir, "prompts.eemb"), anchors, sources=names)
    from .io import atomic_write_bytes

    atomic_write_bytes(os.path.join(out_dir, "classes.txt"), ("\n".join(names) + "\n").encode("utf-8"))
    write_json(os.path.join(out_dir, "meta.json"), asdict(config))
    return {
        "out_dir": out_dir,
        "n_train": config.n_train,
        "n_test": config.n_test,
        "classes": c,
        "sentences": len(sentence_texts),
    }
