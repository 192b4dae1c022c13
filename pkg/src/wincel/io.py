"""Binary embedding interchange files, sidecars, and small file helpers.

The interchange format is shared with external embedding exporters:
magic ``EEMB``, u32 version (little-endian), u8 dtype code (1 = float32),
u64 row count, u32 dimension, then rows*dim float32 values, little-endian.
An optional sidecar ``<file>.meta.jsonl`` maps each row to its source text.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import CorruptFile, IoFailure

EEMB_MAGIC = b"EEMB"
EEMB_VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sIBQI")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoFailure(f"failed writing {path}: {exc}") from exc


def write_embeddings(path: str, array, sources: list[str] | None = None) -> None:
    """Write a float32 embedding matrix, optionally with a row->source sidecar."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    if arr.ndim != 2:
        raise ValueError(f"embedding array must be 2-D, got shape {arr.shape}")
    rows, dim = arr.shape
    header = _HEADER.pack(EEMB_MAGIC, EEMB_VERSION, DTYPE_F32, rows, dim)
    atomic_write_bytes(path, header + arr.astype("<f4").tobytes())
    if sources is not None:
        if len(sources) != rows:
            raise ValueError("sidecar source count must match row count")
        lines = [
            json.dumps({"row": i, "source": s}, ensure_ascii=False)
            for i, s in enumerate(sources)
        ]
        atomic_write_bytes(path + ".meta.jsonl", ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")


def read_embeddings(path: str) -> np.ndarray:
    """Read an interchange file back as a float32 (rows, dim) array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, dtype, rows, dim = _HEADER.unpack_from(blob)
    if magic != EEMB_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != EEMB_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise CorruptFile(f"{path}: unsupported dtype code {dtype}")
    expected = _HEADER.size + rows * dim * 4
    if len(blob) != expected:
        raise CorruptFile(f"{path}: payload length {len(blob)} != expected {expected}")
    if dim < 1:
        raise CorruptFile(f"{path}: dimension must be >= 1")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, dim).copy()


def read_sidecar(path: str) -> list[str]:
    """Read the row->source sidecar next to an interchange file."""
    meta = path + ".meta.jsonl"
    sources: list[str] = []
    try:
        with open(meta, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["row"] != len(sources):
                    raise CorruptFile(f"{meta}: non-sequential row index {rec['row']}")
                sources.append(rec["source"])
    except OSError as exc:
        raise IoFailure(f"cannot read {meta}: {exc}") from exc
    return sources


def canonical_json(obj) -> str:
    """Stable JSON for hashing and reproducible configuration echoes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_json(path: str, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_loss_csv(path: str, history: list[tuple[int, float, float]]) -> None:
    """Per-epoch training history: ``epoch,mean_loss,lr``."""
    lines = ["epoch,mean_loss,lr"]
    for epoch, loss, lr in history:
        lines.append(f"{int(epoch)},{float(loss)!r},{float(lr)!r}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
