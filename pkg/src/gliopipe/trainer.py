"""Training loop: case-level splitting, augmentation, epochs, curves, checkpoints."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import save_checkpoint
from .dcn import CLASS_ORDER, DcnModel, PRESETS, build_dcn
from .ensemble import Prediction
from .manifest import SliceRecord, TileRecord
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tensor

LABEL_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}


@dataclass
class AugmentFlags:
    flip: bool = True
    rotate: bool = True
    scale: bool = True
    crop: bool = True

    @property
    def any(self) -> bool:
        return self.flip or self.rotate or self.scale or self.crop


@dataclass
class TrainConfig:
    model_preset: str = "DCN1"
    epochs: int = 300
    batch_size: int = 128
    lr: float = 0.001
    val_fraction: float = 0.10
    seed: int = 0
    input_size: int = 224
    augment: AugmentFlags = field(default_factory=AugmentFlags)

    def __post_init__(self):
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.model_preset not in PRESETS:
            raise ValueError(f"unknown preset {self.model_preset!r}; choose from {sorted(PRESETS)}")


@dataclass
class CurvePoint:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


# ---- splitting ---------------------------------------------------------------


def _case_label(records) -> str:
    tumor = [r.label for r in records if r.label != "N"]
    return Counter(tumor).most_common(1)[0][0] if tumor else "N"


def split_train_val(records, val_fraction: float, seed: int):
    """Case-level stratified split: all units of one case land on one side."""
    if not records:
        raise ValueError("cannot split an empty record list")
    by_case: dict[str, list] = {}
    for r in records:
        by_case.setdefault(r.case_id, []).append(r)

    by_class: dict[str, list[str]] = {}
    for case_id in sorted(by_case):
        by_class.setdefault(_case_label(by_case[case_id]), []).append(case_id)

    rng = np.random.default_rng(seed)
    val_cases: set[str] = set()
    for label in sorted(by_class):
        cases = by_class[label]
        if len(cases) < 2:
            raise ValueError(
                f"class {label!r} has a single case ({cases[0]}) and cannot be "
                "split into train and validation"
            )
        n_val = max(1, int(round(val_fraction * len(cases))))
        if n_val >= len(cases):
            n_val = len(cases) - 1
        order = rng.permutation(len(cases))
        val_cases.update(cases[i] for i in order[:n_val])

    train = [r for r in records if r.case_id not in val_cases]
    val = [r for r in records if r.case_id in val_cases]
    return train, val


# ---- augmentation ------------------------------------------------------------


def _resize_chw(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[1] == size and img.shape[2] == size:
        return img
    out = np.empty((img.shape[0], size, size), dtype=np.float32)
    for ch in range(img.shape[0]):
        pil = Image.fromarray(img[ch], mode="F")
        out[ch] = np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.float32)
    return out


def rotate90(img: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate a CHW image by a multiple of 90 degrees."""
    return np.ascontiguousarray(np.rot90(img, k=quarter_turns % 4, axes=(1, 2)))


def augment(img: np.ndarray, seed: int, flags: AugmentFlags | None = None) -> np.ndarray:
    """Seeded augmentation pipeline; output shape equals input shape.

    Stages (each independently seeded from ``seed``): horizontal and vertical
    flips at p=0.5, right-angle rotation, scale in [0.9, 1.1] with center
    crop/pad back, and a random crop of 90% area resized back.
    """
    flags = AugmentFlags() if flags is None else flags
    if img.ndim != 3 or img.shape[1] != img.shape[2]:
        raise ValueError(f"augment expects a square CHW image, got {img.shape}")
    if not flags.any:
        return img
    size = img.shape[1]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]

    if flags.flip:
        if rngs[0].random() < 0.5:
            img = img[:, :, ::-1]
        if rngs[0].random() < 0.5:
            img = img[:, ::-1, :]
    if flags.rotate:
        img = rotate90(img, int(rngs[1].integers(0, 4)))
    if flags.scale:
        factor = rngs[2].uniform(0.9, 1.1)
        new = max(1, int(round(size * factor)))
        if new != size:
            scaled = _resize_chw(np.ascontiguousarray(img, dtype=np.float32), new)
            if new > size:
                off = (new - size) // 2
                img = scaled[:, off : off + size, off : off + size]
            else:
                pad = size - new
                lo = pad // 2
                img = np.pad(scaled, ((0, 0), (lo, pad - lo), (lo, pad - lo)),
                             mode="edge")
    if flags.crop:
        side = max(1, int(round(size * np.sqrt(0.9))))
        max_off = size - side
        oy = int(rngs[3].integers(0, max_off + 1))
        ox = int(rngs[3].integers(0, max_off + 1))
        cropped = np.ascontiguousarray(img[:, oy : oy + side, ox : ox + side], dtype=np.float32)
        img = _resize_chw(cropped, size)
    return np.ascontiguousarray(img, dtype=np.float32)


# ---- data loading ------------------------------------------------------------


def load_record_image(record, input_size: int) -> np.ndarray:
    """Load one manifest unit as a CHW float32 array in [0, 1]."""
    if isinstance(record, TileRecord):
        img = Image.open(record.tile_path).convert("RGB")
        if img.size != (input_size, input_size):
            img = img.resize((input_size, input_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    if isinstance(record, SliceRecord):
        plane = np.load(record.slice_path).astype(np.float32)
        chw = plane[None]
        return _resize_chw(chw, input_size)
    raise TypeError(f"unsupported record type {type(record).__name__}")


def in_channels_for(records) -> int:
    return 3 if isinstance(records[0], TileRecord) else 1


# ---- training ----------------------------------------------------------------


def _epoch_pass_eval(model: DcnModel, images: np.ndarray, labels: np.ndarray,
                     batch_size: int) -> tuple[float, float]:
    model.eval()
    losses, correct = [], 0
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        logits = model(Tensor(xb))
        loss = T.cross_entropy_loss(logits, yb)
        losses.append(float(loss.data) * len(xb))
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return float(np.sum(losses) / len(images)), correct / len(images)


def train(config: TrainConfig, records, out_dir) -> tuple[Path, list[CurvePoint]]:
    """Run the epoch loop on a manifest; returns (best checkpoint path, curves).

    Writes ``curves.csv``, ``best.ckpt`` and ``final.ckpt`` into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels_present = {r.label for r in records}
    if len(labels_present) < 2:
        raise ValueError(f"manifest needs >= 2 classes, found {sorted(labels_present)}")

    train_recs, val_recs = split_train_val(records, config.val_fraction, config.seed)
    train_x = np.stack([load_record_image(r, config.input_size) for r in train_recs])
    train_y = np.array([LABEL_INDEX[r.label] for r in train_recs], dtype=np.int64)
    val_x = np.stack([load_record_image(r, config.input_size) for r in val_recs])
    val_y = np.array([LABEL_INDEX[r.label] for r in val_recs], dtype=np.int64)

    cfg = PRESETS[config.model_preset](
        input_size=config.input_size, in_channels=in_channels_for(records)
    )
    model = build_dcn(cfg, seed=config.seed)
    params = model.named_parameters()
    opt = AdamState(params, lr=config.lr)

    curves: list[CurvePoint] = []
    best_val_acc = -1.0
    best_path = out_dir / "best.ckpt"
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_x))
        model.train()
        epoch_loss, epoch_correct = 0.0, 0
        for bstart in range(0, len(order), config.batch_size):
            idx = order[bstart : bstart + config.batch_size]
            xb = np.stack([
                augment(train_x[i], seed=int(1_000_003 * epoch + i), flags=config.augment)
                for i in idx
            ])
            yb = train_y[idx]
            logits = model(Tensor(xb))
            loss = T.cross_entropy_loss(logits, yb)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {bstart // config.batch_size}, "
                    f"lr {config.lr}"
                )
            zero_grads(params)
            loss.backward()
            adam_step(params, opt)
            epoch_loss += float(loss.data) * len(idx)
            epoch_correct += int((logits.data.argmax(axis=1) == yb).sum())

        val_loss, val_acc = _epoch_pass_eval(model, val_x, val_y, config.batch_size)
        point = CurvePoint(
            epoch=epoch,
            train_loss=epoch_loss / len(train_x),
            train_acc=epoch_correct / len(train_x),
            val_loss=val_loss,
            val_acc=val_acc,
        )
        curves.append(point)
        if val_acc > best_val_acc:
            best_val_acc = val_acc
            save_checkpoint(model, opt, best_path)

    save_checkpoint(model, opt, out_dir / "final.ckpt")
    write_curves(curves, out_dir / "curves.csv")
    return best_path, curves


# ---- inference ---------------------------------------------------------------


def predict_batch(model: DcnModel, images: np.ndarray,
                  batch_size: int = 64) -> list[Prediction]:
    """Eval-mode 4-class predictions for a stack of CHW images."""
    model.eval()
    preds: list[Prediction] = []
    for start in range(0, len(images), batch_size):
        logits = model(Tensor(images[start : start + batch_size]))
        probs = T.softmax(Tensor(logits.data)).data.astype(np.float64)
        probs /= probs.sum(axis=1, keepdims=True)
        for row in probs:
            preds.append(Prediction.from_probs(row, CLASS_ORDER))
    return preds


# ---- curves ------------------------------------------------------------------


def write_curves(curves: list[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for p in curves:
            writer.writerow([p.epoch, f"{p.train_loss:.6f}", f"{p.train_acc:.6f}",
                             f"{p.val_loss:.6f}", f"{p.val_acc:.6f}"])


def read_curves(path) -> list[CurvePoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(CurvePoint(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                train_acc=float(row["train_acc"]),
                val_loss=float(row["val_loss"]),
                val_acc=float(row["val_acc"]),
            ))
    return out
