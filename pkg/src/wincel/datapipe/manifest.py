"""Triplet manifest and the deduplicated sentence bank.

The manifest is JSON Lines, one tile record per line; the bank is JSON
Lines of ``{"id": int, "text": str}``. Both are written with sorted keys
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import CorruptFile, IoFailure, ValidationError
from ..io import atomic_write_bytes
from .sentences import TEXT_TYPES, SentenceSets
from .tiles import SplitAssignment, tile_center


@dataclass
class SentenceBank:
    """Deduplicated sentence store: id = first-seen order."""

    texts: list[str] = field(default_factory=list)
    embeddings: np.ndarray | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for i, text in enumerate(self.texts):
            self._index.setdefault(text, i)

    def add(self, text: str) -> int:
        if text in self._index:
            return self._index[text]
        idx = len(self.texts)
        self.texts.append(text)
        self._index[text] = idx
        return idx

    def __len__(self) -> int:
        return len(self.texts)

    def save(self, path: str) -> None:
        lines = [
            json.dumps({"id": i, "text": t}, ensure_ascii=False, sort_keys=True)
            for i, t in enumerate(self.texts)
        ]
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")

    @classmethod
    def load(cls, path: str) -> "SentenceBank":
        texts: list[str] = []
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec["id"] != len(texts):
                        raise CorruptFile(f"{path}: non-sequential sentence id {rec['id']}")
                    texts.append(rec["text"])
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return cls(texts=texts)


@dataclass
class TileRecord:
    """One manifest line: a tile with its species, sentences, and label."""

    tile_id: str
    easting: float
    northing: float
    species: list[str]
    sentence_ids: list[int]
    eunis_label: int
    split: str = "unassigned"

    def __post_init__(self):
        if not self.species:
            raise ValidationError(f"tile {self.tile_id}: species must be nonempty")
        if not self.sentence_ids:
            raise ValidationError(f"tile {self.tile_id}: sentence_ids must be nonempty")


def build_manifest(
    tile_species: dict[str, list[str]],
    tile_labels: dict[str, str],
    class_list: list[str],
    split_assign: SplitAssignment,
    sentence_sets: dict[str, SentenceSets],
    text_type: str,
    grid_origin=(0.0, 0.0),
) -> tuple[list[TileRecord], SentenceBank, int]:
    """Assemble tile records for one text type.

    Per tile the chosen sentence set is unioned over its observed species
    (species order, then sentence order, first occurrence wins) and stored
    as bank ids. Tiles whose union is empty are dropped and counted.
    """
    if text_type not in TEXT_TYPES:
        raise ValidationError(f"text_type must be one of {TEXT_TYPES}, got {text_type!r}")
    class_index = {code: i for i, code in enumerate(class_list)}
    bank = SentenceBank()
    records: list[TileRecord] = []
    dropped_empty = 0
    for tile_id in sorted(tile_labels):
        species = tile_species.get(tile_id, [])
        if not species:
            continue
        sentences: list[str] = []
        seen: set[str] = set()
        for sp in species:
            sets = sentence_sets.get(sp)
            if sets is None:
                continue
            for sentence in sets.by_type(text_type):
                if sentence and sentence not in seen:
                    seen.add(sentence)
                    sentences.append(sentence)
        if not sentences:
            dropped_empty += 1
            continue
        easting, northing = tile_center(tile_id, origin=grid_origin)
        records.append(
            TileRecord(
                tile_id=tile_id,
                easting=easting,
                northing=northing,
                species=list(species),
                sentence_ids=[bank.add(s) for s in sentences],
                eunis_label=class_index[tile_labels[tile_id]],
                split=split_assign.split_of(easting, northing),
            )
        )
    return records, bank, dropped_empty


def write_manifest(records: list[TileRecord], path: str) -> None:
    lines = [json.dumps(asdict(r), ensure_ascii=False, sort_keys=True) for r in records]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")


def read_manifest(path: str) -> list[TileRecord]:
    records: list[TileRecord] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                records.append(TileRecord(**json.loads(line)))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return records


def sentence_stats(
    tile_species: dict[str, list[str]],
    tile_ids: list[str],
    sentence_sets: dict[str, SentenceSets],
) -> dict:
    """Per-text-type counts over the final tiles: total sentence
    assignments, globally unique sentences, and the mean per tile."""
    stats = {}
    for text_type in TEXT_TYPES:
        total = 0
        unique: set[str] = set()
        for tile_id in tile_ids:
            tile_sentences: set[str] = set()
            for sp in tile_species.get(tile_id, []):
                sets = sentence_sets.get(sp)
                if sets is None:
                    continue
                tile_sentences.update(s for s in sets.by_type(text_type) if s)
            total += len(tile_sentences)
            unique.update(tile_sentences)
        stats[text_type] = {
            "sentences": total,
            "unique_sentences": len(unique),
            "avg_per_location": round(total / len(tile_ids), 4) if tile_ids else 0.0,
        }
    return stats
