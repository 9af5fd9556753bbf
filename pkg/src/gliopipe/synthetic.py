"""Synthetic desk-scale cohort generation with planted class-dependent texture.

Slides get a per-class stain palette and blob density; volumes get a per-class
lesion size and contrast. Enough signal for a small DCN to separate classes
within a few epochs, while exercising the same ingest paths as real data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .radio import Volume, write_volume_raw

# base RGB stain palette per class; distinct channel ratios, all non-bright
SLIDE_PALETTE = {
    "A": (150, 60, 160),
    "O": (60, 140, 160),
    "G": (180, 150, 60),
}

# per-class nucleus density for the planted texture
SLIDE_DENSITY = {"A": 0.05, "O": 0.15, "G": 0.30}

# lesion blob radius (voxels) and added contrast per class
LESION_SHAPE = {"A": (3, 80.0), "O": (5, 160.0), "G": (8, 260.0)}


def make_synthetic_slide(label: str, rng: np.random.Generator,
                         tile_px: int = 64, grid: int = 4) -> np.ndarray:
    """RGB slide of grid x grid tiles; the last column is bright background."""
    h = w = tile_px * grid
    base = np.array(SLIDE_PALETTE[label], dtype=np.float64)
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = base + rng.normal(0, 12, size=(h, w, 3))

    # dark nucleus-like dots at a class-dependent density
    n_dots = int(SLIDE_DENSITY[label] * h * w / 40)
    ys = rng.integers(1, h - 1, size=n_dots)
    xs = rng.integers(1, w - 1, size=n_dots)
    for y, x in zip(ys, xs):
        img[y - 1 : y + 2, x - 1 : x + 2] *= 0.35

    # bright background column: every channel strictly above the 204 threshold
    img[:, (grid - 1) * tile_px :] = rng.uniform(215, 250, size=(h, tile_px, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def make_synthetic_volume(case_id: str, modality: str, label: str,
                          rng: np.random.Generator,
                          dims: tuple[int, int, int] = (48, 48, 16),
                          lesion_z: tuple[int, int] = (5, 10)) -> Volume:
    """Brain-like volume: elliptical mask, class-dependent lesion in [z0, z1]."""
    x_dim, y_dim, z_dim = dims
    xs, ys = np.meshgrid(np.arange(x_dim), np.arange(y_dim), indexing="ij")
    brain = ((xs - x_dim / 2) / (x_dim * 0.42)) ** 2 + ((ys - y_dim / 2) / (y_dim * 0.42)) ** 2 <= 1.0

    radius, contrast = LESION_SHAPE[label]
    data = np.zeros(dims, dtype=np.float32)
    cx = x_dim // 2 + int(rng.integers(-4, 5))
    cy = y_dim // 2 + int(rng.integers(-4, 5))
    for z in range(z_dim):
        plane = np.where(brain, 100.0 + rng.normal(0, 6, size=(x_dim, y_dim)), 0.0)
        if lesion_z[0] <= z <= lesion_z[1]:
            lesion = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
            plane = np.where(lesion & brain, plane + contrast, plane)
        data[:, :, z] = plane
    return Volume(case_id=case_id, modality=modality, data=data)


def generate_cohort(
    out_dir,
    n_cases: int = 12,
    seed: int = 0,
    modalities: tuple[str, ...] = ("T2w", "GdT1w"),
    tile_px: int = 64,
    volume_dims: tuple[int, int, int] = (48, 48, 16),
) -> dict:
    """Write a paired slide + volume cohort with labels and positivity sidecars.

    Layout under ``out_dir``: slides/{case}.png, volumes/{case}_{mod}.vol,
    labels.csv (case_id,label), positivity.csv (case_id,modality,z_start,z_end).
    Class labels cycle A, O, G so every class has n_cases // 3 cases.
    """
    out_dir = Path(out_dir)
    slide_dir = out_dir / "slides"
    vol_dir = out_dir / "volumes"
    slide_dir.mkdir(parents=True, exist_ok=True)
    vol_dir.mkdir(parents=True, exist_ok=True)

    labels = {}
    positivity_rows = []
    classes = ("A", "O", "G")
    for i in range(n_cases):
        case_id = f"case{i:02d}"
        label = classes[i % 3]
        labels[case_id] = label
        rng = np.random.default_rng([seed, i])

        slide = make_synthetic_slide(label, rng, tile_px=tile_px)
        Image.fromarray(slide).save(slide_dir / f"{case_id}.png")

        z_dim = volume_dims[2]
        z0 = int(rng.integers(2, z_dim // 2))
        z1 = min(z_dim - 2, z0 + int(rng.integers(3, 7)))
        for modality in modalities:
            vol = make_synthetic_volume(case_id, modality, label, rng,
                                        dims=volume_dims, lesion_z=(z0, z1))
            write_volume_raw(vol, vol_dir / f"{case_id}_{modality}.vol")
            positivity_rows.append((case_id, modality, z0, z1))

    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "label"])
        for case_id in sorted(labels):
            writer.writerow([case_id, labels[case_id]])
    with open(out_dir / "positivity.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "modality", "z_start", "z_end"])
        for row in positivity_rows:
            writer.writerow(row)

    return {"labels": labels, "slide_dir": slide_dir, "volume_dir": vol_dir,
            "labels_csv": out_dir / "labels.csv",
            "positivity_csv": out_dir / "positivity.csv"}
