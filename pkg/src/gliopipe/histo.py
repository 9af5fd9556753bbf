"""Whole-slide tile extraction, quality control, and manifest construction.

Slides are ingested as plain raster images (PNG/TIFF level exports) with a
sidecar pixel-resolution value; pyramidal WSI containers are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import TileRecord, balance_records

TILE_SIZE = 2000
BRIGHT_THRESHOLD = 204          # 0.80 * 255, strict ">"
BRIGHT_FRACTION_LIMIT = 0.95    # strict ">": more than 95% bright pixels
CELLULARITY_MIN = 0.80          # strict ">": tile qualifies as positive
DARK_ARTIFACT_SPREAD = 10.0     # mean max-min channel spread, 8-bit scale
DARK_ARTIFACT_INTENSITY = 128.0
HEMORRHAGE_RED_EXCESS = 60.0

# per-case positive-tile quotas by pixel resolution (microns per pixel)
QUOTA_TABLE = {
    0.25: {"O": 10, "A": 10, "G": 31},
    0.50: {"O": 5, "A": 20, "G": 50},
}


@dataclass
class QcVerdict:
    background_fraction: float
    bright_pixel_fraction: float
    verdict: str  # "positive" | "negative_N"


def _check_rgb(tile: np.ndarray) -> np.ndarray:
    tile = np.asarray(tile)
    if tile.ndim != 3 or tile.shape[2] != 3 or tile.dtype != np.uint8:
        raise ValueError(f"expected 8-bit RGB tile (HxWx3 uint8), got {tile.shape} {tile.dtype}")
    return tile


def bright_mask(tile: np.ndarray) -> np.ndarray:
    """Pixels with all three channels strictly above 80% intensity."""
    tile = _check_rgb(tile)
    return np.all(tile > BRIGHT_THRESHOLD, axis=2)


def qc_tile(tile: np.ndarray, flag_dark_artifacts: bool = True,
            flag_hemorrhage: bool = False) -> QcVerdict:
    """Classify a tile as usable tissue or the negative class N."""
    tile = _check_rgb(tile)
    bright = bright_mask(tile)
    frac = float(bright.mean(dtype=np.float64))
    negative = frac > BRIGHT_FRACTION_LIMIT

    if not negative and flag_dark_artifacts:
        # pen marks and similar artifacts: dark and nearly colorless
        f = tile.astype(np.float64)
        spread = float((f.max(axis=2) - f.min(axis=2)).mean())
        if spread < DARK_ARTIFACT_SPREAD and float(f.mean()) < DARK_ARTIFACT_INTENSITY:
            negative = True
    if not negative and flag_hemorrhage:
        f = tile.astype(np.float64)
        if float(f[..., 0].mean() - (f[..., 1].mean() + f[..., 2].mean()) / 2.0) > HEMORRHAGE_RED_EXCESS:
            negative = True

    return QcVerdict(
        background_fraction=frac,
        bright_pixel_fraction=frac,
        verdict="negative_N" if negative else "positive",
    )


def cellularity_fraction(tile: np.ndarray) -> float:
    """Fraction of non-bright pixels; > 0.80 qualifies a tile as positive."""
    return 1.0 - float(bright_mask(tile).mean(dtype=np.float64))


def tile_grid(width: int, height: int, tile: int = TILE_SIZE):
    """Non-overlapping grid positions; partial border tiles are dropped.

    Returns (row, col, x, y) with x = col * tile, y = row * tile.
    """
    if tile <= 0:
        raise ValueError(f"tile size must be positive, got {tile}")
    n_cols = width // tile
    n_rows = height // tile
    return [(r, c, c * tile, r * tile) for r in range(n_rows) for c in range(n_cols)]


def extract_tiles(
    slide: np.ndarray,
    case_id: str,
    source_path: str,
    slide_label: str,
    resolution: float,
    quota: int,
    seed: int = 0,
    tile_size: int = TILE_SIZE,
    out_dir: Path | None = None,
    flag_dark_artifacts: bool = True,
    flag_hemorrhage: bool = False,
) -> list[TileRecord]:
    """Grid a slide into tiles and emit labeled TileRecords.

    Tiles passing QC with cellularity > 0.80 get the slide's label, capped at
    ``quota`` via a seeded row-major subsample; QC rejects become class N.
    Tiles that are neither (mixed tissue/background) are dropped.
    """
    if slide_label not in ("A", "O", "G"):
        raise ValueError(f"slide label must be A, O or G, got {slide_label!r}")
    if quota < 0:
        raise ValueError(f"quota must be >= 0, got {quota}")
    slide = _check_rgb(slide)
    h, w = slide.shape[:2]

    positives: list[tuple[int, int, np.ndarray]] = []
    negatives: list[tuple[int, int, np.ndarray]] = []
    for r, c, x, y in tile_grid(w, h, tile_size):
        tile = slide[y : y + tile_size, x : x + tile_size]
        verdict = qc_tile(tile, flag_dark_artifacts, flag_hemorrhage)
        if verdict.verdict == "negative_N":
            negatives.append((r, c, tile))
        elif cellularity_fraction(tile) > CELLULARITY_MIN:
            positives.append((r, c, tile))

    if len(positives) > quota:
        rng = np.random.default_rng([seed, 0])
        keep = sorted(rng.choice(len(positives), size=quota, replace=False))
        positives = [positives[i] for i in keep]
    elif quota == 0:
        positives = []

    records: list[TileRecord] = []
    for label, group in ((slide_label, positives), ("N", negatives)):
        for r, c, tile in group:
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                tile_path = str(out_dir / f"{case_id}_r{r}_c{c}.png")
                Image.fromarray(tile).save(tile_path)
            else:
                tile_path = f"{source_path}#r{r}c{c}"
            records.append(
                TileRecord(
                    case_id=case_id,
                    source_path=source_path,
                    row=r,
                    col=c,
                    pixel_resolution=resolution,
                    label=label,
                    tile_path=tile_path,
                )
            )
    records.sort(key=lambda t: (t.row, t.col))
    return records


def quota_for(resolution: float, label: str, table=None) -> int:
    table = QUOTA_TABLE if table is None else table
    try:
        return table[resolution][label]
    except KeyError:
        raise KeyError(
            f"no quota for resolution {resolution} / label {label!r}; "
            f"known resolutions: {sorted(table)}"
        ) from None


balance_manifest = balance_records
