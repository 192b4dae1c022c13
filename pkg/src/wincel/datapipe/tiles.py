"""Tile assignment, class rebalancing, and the spatial block split.

Tiles are half-open 100 m cells (a point on a corner belongs to the cell
whose lower-left corner it is). Splits assign whole 20 km blocks so no
tile pair in different splits ever shares a block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import IoFailure, MergeCycle, OutOfExtent, TooFewBlocks, ValidationError

TILE_CELL_M = 100.0
BLOCK_SIZE_M = 20_000.0
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.6, 0.1, 0.3)
REMOVE_TOKEN = "REMOVE"

_EARTH_RADIUS_M = 6_371_000.0


def project_lonlat(lat: float, lon: float, lat0: float, lon0: float) -> tuple[float, float]:
    """Simple local meters projection for synthetic/test coordinates.

    Scaled-equirectangular about (lat0, lon0); adequate at the tens-of-km
    scale of the tests, not a real national grid. Real pipelines should
    pass a proper transform callback instead.
    """
    east = math.radians(lon - lon0) * _EARTH_RADIUS_M * math.cos(math.radians(lat0))
    north = math.radians(lat - lat0) * _EARTH_RADIUS_M
    return east, north


def tile_index(easting: float, northing: float, origin=(0.0, 0.0), cell: float = TILE_CELL_M) -> tuple[int, int]:
    """Half-open cell index: corner points belong to the cell they open."""
    return (
        math.floor((easting - origin[0]) / cell),
        math.floor((northing - origin[1]) / cell),
    )


def tile_id_of(ix: int, iy: int) -> str:
    return f"{ix}_{iy}"


def tile_center(tile_id: str, origin=(0.0, 0.0), cell: float = TILE_CELL_M) -> tuple[float, float]:
    ix, iy = (int(p) for p in tile_id.split("_"))
    return origin[0] + ix * cell, origin[1] + iy * cell


def assign_tiles(
    occurrences,
    grid_origin=(0.0, 0.0),
    cell: float = TILE_CELL_M,
    extent=None,
) -> dict[str, list[str]]:
    """Map projected occurrences to tiles: tile_id -> sorted species list.

    ``occurrences`` yields (species, easting, northing). With ``extent`` =
    (e_min, n_min, e_max, n_max), points outside raise :class:`OutOfExtent`.
    """
    tiles: dict[str, set[str]] = {}
    for species, easting, northing in occurrences:
        if extent is not None:
            e_min, n_min, e_max, n_max = extent
            if not (e_min <= easting < e_max and n_min <= northing < n_max):
                raise OutOfExtent(f"point ({easting}, {northing}) outside extent")
        ix, iy = tile_index(easting, northing, grid_origin, cell)
        tiles.setdefault(tile_id_of(ix, iy), set()).add(species)
    return {tid: sorted(tiles[tid]) for tid in sorted(tiles)}


def resolve_merges(merge_map: dict[str, str]) -> dict[str, str]:
    """Follow merge chains to their final target; cycles are an error."""
    resolved: dict[str, str] = {}
    for start in merge_map:
        seen = {start}
        target = merge_map[start]
        while target in merge_map and target != REMOVE_TOKEN:
            if target in seen:
                raise MergeCycle(f"merge cycle through {target!r}")
            seen.add(target)
            target = merge_map[target]
        resolved[start] = target
    return resolved


def rebalance_eunis(
    tile_labels: dict[str, str],
    min_count: int = 100,
    cap: int = 10_000,
    merge_map: dict[str, str] | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[dict[str, str], list[str], dict]:
    """Merge/remove rare classes and subsample over-represented ones.

    Merges apply first; classes still below ``min_count`` are removed;
    classes above ``cap`` are uniformly subsampled to ``cap`` (seeded).
    Returns (kept tile -> final code, sorted final class list, stats).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    resolved = resolve_merges(merge_map or {})
    merged: dict[str, str] = {}
    removed_explicit = 0
    for tid in sorted(tile_labels):
        code = resolved.get(tile_labels[tid], tile_labels[tid])
        if code == REMOVE_TOKEN:
            removed_explicit += 1
            continue
        merged[tid] = code

    by_class: dict[str, list[str]] = {}
    for tid, code in merged.items():
        by_class.setdefault(code, []).append(tid)

    kept: dict[str, str] = {}
    removed_rare = 0
    subsampled = 0
    for code in sorted(by_class):
        tids = sorted(by_class[code])
        if len(tids) < min_count:
            removed_rare += len(tids)
            continue
        if len(tids) > cap:
            chosen = rng.choice(len(tids), size=cap, replace=False)
            subsampled += len(tids) - cap
            tids = [tids[int(i)] for i in sorted(chosen)]
        for tid in tids:
            kept[tid] = code
    classes = sorted(set(kept.values()))
    stats = {
        "removed_explicit": removed_explicit,
        "removed_below_min": removed_rare,
        "subsampled_away": subsampled,
        "final_classes": len(classes),
    }
    return kept, classes, stats


@dataclass
class SplitAssignment:
    """Block-id -> split mapping; every tile inherits its block's split."""

    block_size_m: float = BLOCK_SIZE_M
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    mapping: dict[tuple[int, int], str] = field(default_factory=dict)

    def block_of(self, easting: float, northing: float) -> tuple[int, int]:
        return (
            math.floor(easting / self.block_size_m),
            math.floor(northing / self.block_size_m),
        )

    def split_of(self, easting: float, northing: float) -> str:
        return self.mapping.get(self.block_of(easting, northing), "unassigned")


def block_split(
    tiles,
    block_size: float = BLOCK_SIZE_M,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> SplitAssignment:
    """Greedy whole-block assignment toward the target tile fractions.

    ``tiles`` yields (tile_id, easting, northing). Blocks are shuffled by
    seed, then each goes to the split currently furthest below its target
    fraction (ties resolve train, val, test).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {fractions}")
    blocks: dict[tuple[int, int], int] = {}
    for _, easting, northing in tiles:
        key = (math.floor(easting / block_size), math.floor(northing / block_size))
        blocks[key] = blocks.get(key, 0) + 1
    if len(blocks) < 3:
        raise TooFewBlocks(f"need at least 3 blocks, got {len(blocks)}")
    total = sum(blocks.values())
    keys = sorted(blocks)
    order = np.random.default_rng(seed).permutation(len(keys))
    assigned = {name: 0 for name in SPLIT_NAMES}
    mapping: dict[tuple[int, int], str] = {}
    for idx in order:
        key = keys[int(idx)]
        deficits = [fractions[i] - assigned[name] / total for i, name in enumerate(SPLIT_NAMES)]
        pick = SPLIT_NAMES[int(np.argmax(deficits))]
        mapping[key] = pick
        assigned[pick] += blocks[key]
    return SplitAssignment(block_size_m=block_size, fractions=tuple(fractions), mapping=mapping)


def read_labels_csv(path: str) -> dict[str, str]:
    """``tile_id,eunis_code`` with a header row."""
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "tile_id" not in reader.fieldnames or "eunis_code" not in reader.fieldnames:
                raise ValidationError(f"{path}: expected header tile_id,eunis_code")
            for row in reader:
                out[row["tile_id"].strip()] = row["eunis_code"].strip()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return out


def read_merge_csv(path: str) -> dict[str, str]:
    """``from_code,to_code`` with a header row; to_code may be REMOVE."""
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "from_code" not in reader.fieldnames or "to_code" not in reader.fieldnames:
                raise ValidationError(f"{path}: expected header from_code,to_code")
            for row in reader:
                out[row["from_code"].strip()] = row["to_code"].strip()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return out
