"""Zero-shot classification by prompt-embedding argmax, plus OA / macro-F1.

Classes are scored by cosine similarity between each image embedding and
one text embedding per class; ties break toward the lower class index
everywhere for determinism. Macro-F1 uses the F1=0 convention for any
zero-division and averages over all configured classes, including classes
absent from the evaluation set (this matters for comparability and is a
choice, not a universal standard).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadTemplate, DimMismatch, IndexOutOfRange, ValidationError


@dataclass
class PromptSet:
    """Unique class names plus an optional single-placeholder template."""

    class_names: list[str]
    template: str = ""

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise ValidationError("need at least two classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("class names must be unique")


def build_prompts(prompt_set: PromptSet) -> list[str]:
    """Substitute each class name into the template (or use it verbatim)."""
    template = prompt_set.template
    if template == "":
        return list(prompt_set.class_names)
    if template.count("{}") != 1:
        raise BadTemplate(f"template must contain exactly one '{{}}', got {template!r}")
    return [template.replace("{}", name) for name in prompt_set.class_names]


def classify(V, class_embeds) -> np.ndarray:
    """Predicted class index per row: cosine argmax, ties to lowest index."""
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(class_embeds, dtype=np.float64)
    if V.ndim != 2 or C.ndim != 2:
        raise DimMismatch("V and class_embeds must be 2-D")
    if V.shape[1] != C.shape[1]:
        raise DimMismatch(f"dims differ: {V.shape[1]} vs {C.shape[1]}")
    return (V @ C.T).argmax(axis=1)


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Counts with entry (i, j) = #(label == i and pred == j)."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise DimMismatch("preds and labels lengths differ")
    if preds.size and (preds.min() < 0 or preds.max() >= num_classes):
        raise IndexOutOfRange("prediction outside [0, num_classes)")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise IndexOutOfRange("label outside [0, num_classes)")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (labels, preds), 1)
    return out


def macro_f1(confusion) -> tuple[float, np.ndarray]:
    """Unweighted mean F1 over all classes; 0/0 ratios count as 0."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 2:
        raise ValidationError("confusion must be square with C >= 2")
    tp = np.diagonal(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return float(f1.mean()), f1


@dataclass
class EvalReport:
    """Zero-shot metrics bundle; serializes to the documented JSON shape."""

    overall_accuracy: float
    macro_f1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray

    @classmethod
    def from_predictions(cls, preds, labels, num_classes: int) -> "EvalReport":
        cm = confusion_matrix(preds, labels, num_classes)
        total = cm.sum()
        oa = float(np.trace(cm) / total) if total else 0.0
        macro, per_class = macro_f1(cm)
        return cls(overall_accuracy=oa, macro_f1=macro, per_class_f1=per_class, confusion=cm)

    def to_dict(self) -> dict:
        return {
            "oa": self.overall_accuracy,
            "macro_f1": self.macro_f1,
            "per_class_f1": [float(x) for x in self.per_class_f1],
            "confusion": [[int(x) for x in row] for row in self.confusion],
        }


def rank_sentences(V_n, bank_embeds, top_k: int) -> list[tuple[int, float]]:
    """Top-k (sentence id, cosine) pairs, descending score, ties by lower id."""
    v = np.asarray(V_n, dtype=np.float64)
    bank = np.asarray(bank_embeds, dtype=np.float64)
    if bank.ndim != 2 or v.ndim != 1 or bank.shape[1] != v.shape[0]:
        raise DimMismatch("bank must be (M, D) matching V_n")
    if top_k > bank.shape[0]:
        raise ValidationError(f"top_k {top_k} exceeds bank size {bank.shape[0]}")
    scores = bank @ v
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return [(int(i), float(scores[i])) for i in order[:top_k]]


def load_class_names(path: str) -> list[str]:
    """One class name per line; blank lines ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    return names
