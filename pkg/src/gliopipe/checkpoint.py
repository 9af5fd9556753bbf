"""Binary checkpoint serialization with integrity checking.

File layout (all integers little-endian):

    magic "DCN1" | version u32 | json_len u32 | json (utf-8) |
    n_tensors u32 | records... | crc32 u32

Each record: name_len u16, name utf-8, dtype tag u8 (0 = f32, 1 = f64),
ndim u8, dims u32 each, raw payload. The trailing CRC32 covers every byte
before it; a truncated or bit-flipped file fails the checksum before any
model state is constructed.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .dcn import DcnConfig, DcnModel, build_dcn
from .optim import AdamState

MAGIC = b"DCN1"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_DTYPE = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    tag = _TAG_FOR_DTYPE[arr.dtype]
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", tag, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def save_checkpoint(model: DcnModel, optimizer_state: AdamState | None, path) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        tensors[f"param.{name}"] = p.data
    for name, b in model.named_buffers().items():
        tensors[f"buffer.{name}"] = b
    meta = {"config": model.config.to_dict(), "seed": model.seed, "optimizer": None}
    if optimizer_state is not None:
        meta["optimizer"] = {
            "lr": optimizer_state.lr,
            "beta1": optimizer_state.beta1,
            "beta2": optimizer_state.beta2,
            "eps": optimizer_state.eps,
            "step": optimizer_state.step,
        }
        for name, m in optimizer_state.m.items():
            tensors[f"adam.m.{name}"] = m
        for name, v in optimizer_state.v.items():
            tensors[f"adam.v.{name}"] = v

    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta_b)) + meta_b
    body += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        body += _pack_tensor(name, tensors[name])
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[DcnModel, AdamState | None]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointTruncatedError(f"file too short ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise CheckpointMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported version {version}, expected {VERSION}")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise CheckpointChecksumError("CRC32 mismatch: file truncated or corrupted")

    r = _Reader(raw[:-4])
    r.pos = 8
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    n_tensors = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        tag, ndim = struct.unpack("<BB", r.take(2))
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} for tensor '{name}'")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        dt = _DTYPE_TAGS[tag]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape).copy()
        tensors[name] = arr

    config = DcnConfig.from_dict(meta["config"])
    model = build_dcn(config, seed=meta.get("seed", 0))
    for name, p in model.named_parameters().items():
        p.data = tensors[f"param.{name}"].astype(np.float32)
    for name, b in model.named_buffers().items():
        b[...] = tensors[f"buffer.{name}"].astype(np.float32)

    state = None
    if meta.get("optimizer") is not None:
        opt = meta["optimizer"]
        state = AdamState(model.named_parameters(), lr=opt["lr"],
                          beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"])
        state.step = opt["step"]
        for name in state.m:
            state.m[name] = tensors[f"adam.m.{name}"].astype(np.float32)
            state.v[name] = tensors[f"adam.v.{name}"].astype(np.float32)
    return model, state
