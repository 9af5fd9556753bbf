"""Dataset manifest records and JSONL round-trip helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

VALID_LABELS = ("A", "O", "G", "N")


@dataclass
class TileRecord:
    case_id: str
    source_path: str
    row: int
    col: int
    pixel_resolution: float
    label: str
    tile_path: str

    def __post_init__(self):
        if self.label not in VALID_LABELS:
            raise ValueError(f"invalid tile label {self.label!r}")


@dataclass
class SliceRecord:
    case_id: str
    modality: str
    z_index: int
    label: str
    slice_path: str

    def __post_init__(self):
        if self.label not in VALID_LABELS:
            raise ValueError(f"invalid slice label {self.label!r}")


def write_manifest(records, path) -> None:
    """Write records as JSONL, one record per line, keys in field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def _record_cls(keys: set[str]):
    for cls in (TileRecord, SliceRecord):
        if keys == {f.name for f in fields(cls)}:
            return cls
    raise ValueError(f"manifest line keys {sorted(keys)} match no known record type")


def read_manifest(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            records.append(_record_cls(set(d)) (**d))
    return records


def balance_records(records, per_class_target, seed: int, strict: bool = True):
    """Deterministic seeded subsample to equal per-class counts.

    ``per_class_target`` is either one int for all classes or a dict keyed by
    label. In strict mode a class with fewer records than its target is an
    error; otherwise the whole class is kept.
    """
    by_class: dict[str, list] = {}
    for rec in records:
        by_class.setdefault(rec.label, []).append(rec)

    out = []
    for label in sorted(by_class):
        pool = by_class[label]
        target = per_class_target[label] if isinstance(per_class_target, dict) else per_class_target
        if len(pool) < target:
            if strict:
                raise ValueError(
                    f"class {label!r} has only {len(pool)} records, target is {target}"
                )
            target = len(pool)
        # per-class RNG so adding records to one class never reshuffles another
        rng = np.random.default_rng([seed, sum(ord(ch) for ch in label)])
        idx = rng.choice(len(pool), size=target, replace=False)
        out.extend(pool[i] for i in sorted(idx))
    return out


def class_counts(records) -> dict[str, int]:
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.label] = counts.get(rec.label, 0) + 1
    return counts
