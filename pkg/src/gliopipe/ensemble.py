"""Weighted-vote aggregation: tiles -> slide, slices -> volume, modalities -> patient.

One parameterized confidence-weighted majority-vote rule serves all three
levels. Unit predictions are 4-class (A, O, G, N); aggregated predictions are
3-class (A, O, G) with N-labeled units discarded before voting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dcn import CLASS_ORDER, TUMOR_CLASSES


@dataclass
class Prediction:
    probs: np.ndarray
    classes: tuple[str, ...]
    label: str
    confidence: float

    @classmethod
    def from_probs(cls, probs, classes=CLASS_ORDER) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(classes),):
            raise ValueError(f"probs shape {probs.shape} does not match classes {classes}")
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"probs must be a distribution, got {probs} (sum {probs.sum()})")
        idx = int(np.argmax(probs))
        return cls(probs=probs, classes=tuple(classes),
                   label=classes[idx], confidence=float(probs[idx]))

    def prob_of(self, cls_name: str) -> float:
        return float(self.probs[self.classes.index(cls_name)])

    def to_dict(self) -> dict:
        return {
            "probs": [float(p) for p in self.probs],
            "classes": list(self.classes),
            "label": self.label,
            "confidence": self.confidence,
        }


@dataclass
class CaseDecision:
    case_id: str
    per_modality: dict[str, Prediction]
    fused: Prediction
    contributing_modalities: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "per_modality": {m: p.to_dict() for m, p in self.per_modality.items()},
            "fused": self.fused.to_dict(),
            "contributing_modalities": list(self.contributing_modalities),
        }


def _mean_tumor_probs(preds: list[Prediction]) -> np.ndarray:
    stacked = np.array([[p.prob_of(c) for c in TUMOR_CLASSES] for p in preds])
    return stacked.mean(axis=0)


def _renormalize(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    if s <= 0:
        return np.full(len(v), 1.0 / len(v))
    return v / s


def _argmax_with_tiebreak(scores: np.ndarray, preds: list[Prediction]) -> int:
    """Largest score; ties go to the class with higher mean probability over
    all inputs, then to fixed class order."""
    best = scores.max()
    tied = [i for i, s in enumerate(scores) if s == best]
    if len(tied) == 1:
        return tied[0]
    means = _mean_tumor_probs(preds)
    best_mean = max(means[i] for i in tied)
    for i in tied:  # class order resolves mean-probability ties
        if means[i] == best_mean:
            return i
    return tied[0]


def _fallback_all_n(preds: list[Prediction]) -> Prediction:
    probs = _renormalize(_mean_tumor_probs(preds))
    return Prediction.from_probs(probs, TUMOR_CLASSES)


def aggregate_tiles(tile_preds: list[Prediction]) -> Prediction:
    """Slide-level decision: sum of confidences per voted class, N dropped."""
    if not tile_preds:
        raise ValueError("aggregate_tiles: empty prediction list")
    voting = [p for p in tile_preds if p.label != "N"]
    if not voting:
        return _fallback_all_n(tile_preds)
    scores = np.zeros(len(TUMOR_CLASSES))
    for p in voting:
        scores[TUMOR_CLASSES.index(p.label)] += p.confidence
    idx = _argmax_with_tiebreak(scores, tile_preds)
    probs = _renormalize(scores)
    return Prediction(probs=probs, classes=TUMOR_CLASSES,
                      label=TUMOR_CLASSES[idx], confidence=float(probs[idx]))


def aggregate_slices(slice_preds: list[Prediction]) -> Prediction:
    """Volume-level decision: confidence-weighted mean of slice probabilities."""
    if not slice_preds:
        raise ValueError("aggregate_slices: empty prediction list")
    voting = [p for p in slice_preds if p.label != "N"]
    if not voting:
        return _fallback_all_n(slice_preds)
    weights = np.array([p.confidence for p in voting])
    stacked = np.array([[p.prob_of(c) for c in TUMOR_CLASSES] for p in voting])
    probs = _renormalize((weights[:, None] * stacked).sum(axis=0))
    return Prediction.from_probs(probs, TUMOR_CLASSES)


def fuse_modalities(
    case_id: str,
    per_modality: dict[str, Prediction],
    weights: dict[str, float] | None = None,
) -> CaseDecision:
    """Patient decision: each modality votes with strength weight * confidence."""
    if not per_modality:
        raise ValueError("fuse_modalities: no modality predictions")
    if weights is None:
        weights = {}
    w = {m: float(weights.get(m, 1.0)) for m in per_modality}
    if any(v < 0 for v in w.values()):
        raise ValueError(f"negative fusion weight in {w}")
    if all(v == 0 for v in w.values()):
        raise ValueError("all fusion weights are zero")

    modalities = sorted(per_modality)
    preds = [per_modality[m] for m in modalities]
    strengths = np.zeros(len(TUMOR_CLASSES))
    for m in modalities:
        p = per_modality[m]
        strengths[TUMOR_CLASSES.index(p.label)] += w[m] * p.confidence
    idx = _argmax_with_tiebreak(strengths, preds)

    stacked = np.array([[p.prob_of(c) for c in TUMOR_CLASSES] for p in preds])
    mix = np.array([w[m] * per_modality[m].confidence for m in modalities])
    probs = _renormalize((mix[:, None] * stacked).sum(axis=0))
    fused = Prediction(probs=probs, classes=TUMOR_CLASSES,
                       label=TUMOR_CLASSES[idx], confidence=float(probs.max()))
    return CaseDecision(
        case_id=case_id,
        per_modality=dict(per_modality),
        fused=fused,
        contributing_modalities=modalities,
    )
