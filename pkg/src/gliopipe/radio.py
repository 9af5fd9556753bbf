"""MRI volume ingest: raw/NIfTI-1 reading, normalization, slice extraction."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import SliceRecord, balance_records

MODALITIES = ("T1w", "T2w", "GdT1w", "FLAIR")

RAW_MAGIC = b"VOL1"

_NIFTI_DTYPES = {
    2: np.dtype("<u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
    256: np.dtype("<i1"),
    512: np.dtype("<u2"),
}


class VolumeFormatError(ValueError):
    """Raised for malformed volume files."""


@dataclass
class Volume:
    case_id: str
    modality: str
    data: np.ndarray  # float32, shape (X, Y, Z)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise VolumeFormatError(f"volume data must be 3-d, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)


# ---- raw format --------------------------------------------------------------


def write_volume_raw(volume: Volume, path) -> None:
    """magic VOL1 | u32 X,Y,Z | f32 payload in C order of (X, Y, Z)."""
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<3I", *volume.data.shape))
        fh.write(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())


def read_volume_raw(path, case_id: str = "", modality: str = "T1w") -> Volume:
    raw = Path(path).read_bytes()
    if raw[:4] != RAW_MAGIC:
        raise VolumeFormatError(f"bad magic {raw[:4]!r}, expected {RAW_MAGIC!r}")
    if len(raw) < 16:
        raise VolumeFormatError("raw volume header truncated")
    x, y, z = struct.unpack("<3I", raw[4:16])
    count = x * y * z
    if count > 2**31:
        raise VolumeFormatError(f"dim overflow: {x}x{y}x{z}")
    payload = raw[16:]
    if len(payload) != 4 * count:
        raise VolumeFormatError(
            f"payload length {len(payload)} does not match dims {x}x{y}x{z} ({4 * count} bytes)"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(x, y, z).copy()
    return Volume(case_id=case_id, modality=modality, data=data)


# ---- NIfTI-1 -----------------------------------------------------------------


def read_volume_nifti(path, case_id: str = "", modality: str = "T1w") -> Volume:
    """Minimal uncompressed NIfTI-1 reader (3-d volumes, common dtypes)."""
    raw = Path(path).read_bytes()
    if len(raw) < 352:
        raise VolumeFormatError("NIfTI file shorter than its header")
    if raw[344:348] not in (b"n+1\x00", b"ni1\x00"):
        raise VolumeFormatError(f"bad NIfTI magic {raw[344:348]!r}")
    dim = struct.unpack("<8h", raw[40:56])
    if dim[0] < 3:
        raise VolumeFormatError(f"expected a 3-d volume, ndim={dim[0]}")
    x, y, z = dim[1], dim[2], dim[3]
    datatype, = struct.unpack("<h", raw[70:72])
    if datatype not in _NIFTI_DTYPES:
        raise VolumeFormatError(f"unsupported NIfTI datatype code {datatype}")
    pixdim = struct.unpack("<8f", raw[76:108])
    vox_offset = int(struct.unpack("<f", raw[108:112])[0])
    scl_slope, scl_inter = struct.unpack("<2f", raw[112:120])

    dt = _NIFTI_DTYPES[datatype]
    count = x * y * z
    payload = raw[vox_offset : vox_offset + count * dt.itemsize]
    if len(payload) != count * dt.itemsize:
        raise VolumeFormatError("NIfTI payload truncated")
    arr = np.frombuffer(payload, dtype=dt).astype(np.float32)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        arr = arr * np.float32(slope) + np.float32(scl_inter)
    # NIfTI stores x fastest: C-order shape is (Z, Y, X)
    data = arr.reshape(z, y, x).transpose(2, 1, 0).copy()
    return Volume(case_id=case_id, modality=modality, data=data,
                  spacing=(pixdim[1], pixdim[2], pixdim[3]))


def read_volume(path, case_id: str = "", modality: str = "T1w") -> Volume:
    """Dispatch on file contents: raw VOL1 or uncompressed NIfTI-1."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == RAW_MAGIC:
        return read_volume_raw(path, case_id, modality)
    return read_volume_nifti(path, case_id, modality)


# ---- normalization -----------------------------------------------------------

STD_FLOOR = 1e-6


def znormalize(volume: Volume) -> Volume:
    """Z-score over nonzero voxels (brain-mask proxy); zeros stay zero."""
    data = volume.data
    mask = data != 0
    if not mask.any():
        return Volume(volume.case_id, volume.modality, data.copy(), volume.spacing)
    vals = data[mask].astype(np.float64)
    mean = vals.mean()
    std = vals.std()
    out = np.zeros_like(data)
    if std >= STD_FLOOR:
        out[mask] = ((vals - mean) / std).astype(np.float32)
    return Volume(volume.case_id, volume.modality, out, volume.spacing)


# ---- slice extraction --------------------------------------------------------


def _resize_slice(plane: np.ndarray, size: int) -> np.ndarray:
    if plane.shape == (size, size):
        return plane.astype(np.float32)
    img = Image.fromarray(plane.astype(np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def _minmax(plane: np.ndarray) -> np.ndarray:
    lo, hi = float(plane.min()), float(plane.max())
    if hi - lo < 1e-12:
        return np.zeros_like(plane)
    return ((plane - lo) / (hi - lo)).astype(np.float32)


def validate_ranges(ranges, z_dim: int):
    """Positive z-ranges are inclusive [start, end], in-bounds, disjoint."""
    prev_end = -1
    for start, end in sorted(ranges):
        if start > end:
            raise ValueError(f"inverted range [{start}, {end}]")
        if start < 0 or end >= z_dim:
            raise ValueError(f"range [{start}, {end}] outside [0, {z_dim})")
        if start <= prev_end:
            raise ValueError(f"overlapping positive ranges at z={start}")
        prev_end = end


def extract_slices(
    volume: Volume,
    positive_ranges,
    case_label: str,
    input_size: int,
    out_dir: Path,
    axis: int = 2,
) -> list[SliceRecord]:
    """Emit one SliceRecord per index along ``axis``.

    Slices inside the (inclusive) positive ranges get the case label, the rest
    become class N. Each slice is taken from the z-normalized volume, resized
    to ``input_size`` and min-max scaled to [0, 1], then stored as .npy.
    """
    if case_label not in ("A", "O", "G"):
        raise ValueError(f"case label must be A, O or G, got {case_label!r}")
    z_dim = volume.data.shape[axis]
    validate_ranges(positive_ranges, z_dim)
    positive = np.zeros(z_dim, dtype=bool)
    for start, end in positive_ranges:
        positive[start : end + 1] = True

    normed = znormalize(volume)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for z in range(z_dim):
        plane = np.take(normed.data, z, axis=axis)
        plane = _minmax(_resize_slice(plane, input_size))
        slice_path = out_dir / f"{volume.case_id}_{volume.modality}_z{z:03d}.npy"
        np.save(slice_path, plane)
        records.append(
            SliceRecord(
                case_id=volume.case_id,
                modality=volume.modality,
                z_index=z,
                label=case_label if positive[z] else "N",
                slice_path=str(slice_path),
            )
        )
    return records


def balance_slices(records, per_class_target: int = 1500, seed: int = 0,
                   strict: bool = True):
    """Seeded per-class balancing of slice records (one modality at a time)."""
    return balance_records(records, per_class_target, seed, strict=strict)
