"""Occurrence-record parsing and filtering.

Input is a tab-separated table with Darwin Core column names. Filtering
removes records with geolocation uncertainty above 100 m (or missing),
missing species, the COORDINATE_ROUNDED issue flag, kingdoms other than
Animalia/Plantae, species without a habitat-bearing article, and duplicate
(species, rounded location) pairs. Each rejection is counted under the
first rule that fires, so counts sum to the number dropped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from ..errors import IoFailure

MAX_UNCERTAINTY_M = 100.0
ALLOWED_KINGDOMS = ("Animalia", "Plantae")
ROUNDED_FLAG = "COORDINATE_ROUNDED"

# Rejection rules in the order they are applied.
REJECTION_RULES = (
    "missing_species",
    "uncertainty",
    "coordinate_rounded",
    "kingdom",
    "no_wikipedia_habitat",
    "duplicate",
)

# Duplicate detection rounds coordinates to 4 decimal places (~11 m).
DEDUP_DECIMALS = 4


@dataclass
class OccurrenceRecord:
    """One geolocated species observation."""

    species: str | None
    lat: float
    lon: float
    coord_uncertainty_m: float | None = None
    basis_of_record: str = ""
    year: int | None = None
    issue_flags: list[str] = field(default_factory=list)
    taxon_kingdom: str = ""


def _parse_float(value: str):
    value = value.strip()
    return float(value) if value else None


def read_gbif_tsv(path: str) -> tuple[list[OccurrenceRecord], list[tuple[int, str]]]:
    """Parse the occurrence table; malformed rows are collected, not fatal.

    Returns (records, malformed) where malformed holds (line_number, reason).
    """
    records: list[OccurrenceRecord] = []
    malformed: list[tuple[int, str]] = []
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for line_no, row in enumerate(reader, start=2):
            try:
                lat = _parse_float(row.get("decimalLatitude", ""))
                lon = _parse_float(row.get("decimalLongitude", ""))
                if lat is None or lon is None:
                    raise ValueError("missing coordinates")
                if not -90 <= lat <= 90 or not -180 <= lon <= 180:
                    raise ValueError(f"coordinates out of range: {lat}, {lon}")
                year_s = (row.get("year") or "").strip()
                issue = (row.get("issue") or "").strip()
                records.append(
                    OccurrenceRecord(
                        species=(row.get("species") or "").strip() or None,
                        lat=lat,
                        lon=lon,
                        coord_uncertainty_m=_parse_float(row.get("coordinateUncertaintyInMeters", "")),
                        basis_of_record=(row.get("basisOfRecord") or "").strip(),
                        year=int(year_s) if year_s else None,
                        issue_flags=[f for f in issue.split(";") if f],
                        taxon_kingdom=(row.get("kingdom") or "").strip(),
                    )
                )
            except (ValueError, TypeError) as exc:
                malformed.append((line_no, str(exc)))
    return records, malformed


def _normalize_flag(flag: str) -> str:
    return flag.strip().upper().replace(" ", "_")


def filter_gbif(records, has_article) -> tuple[list[OccurrenceRecord], dict[str, int]]:
    """Apply the rejection rules; ``has_article(species)`` reports whether a
    habitat-bearing article exists for the species."""
    kept: list[OccurrenceRecord] = []
    counts = {rule: 0 for rule in REJECTION_RULES}
    seen: set[tuple[str, float, float]] = set()
    for rec in records:
        if not rec.species:
            counts["missing_species"] += 1
            continue
        if rec.coord_uncertainty_m is None or rec.coord_uncertainty_m > MAX_UNCERTAINTY_M:
            counts["uncertainty"] += 1
            continue
        if any(_normalize_flag(f) == ROUNDED_FLAG for f in rec.issue_flags):
            counts["coordinate_rounded"] += 1
            continue
        if rec.taxon_kingdom not in ALLOWED_KINGDOMS:
            counts["kingdom"] += 1
            continue
        if not has_article(rec.species):
            counts["no_wikipedia_habitat"] += 1
            continue
        key = (rec.species, round(rec.lat, DEDUP_DECIMALS), round(rec.lon, DEDUP_DECIMALS))
        if key in seen:
            counts["duplicate"] += 1
            continue
        seen.add(key)
        kept.append(rec)
    return kept, counts
