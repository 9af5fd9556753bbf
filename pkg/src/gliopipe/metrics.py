"""Challenge metrics: confusion matrix, F1, Cohen's kappa, balanced accuracy.

All accumulation is done in float64 regardless of upstream precision.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .dcn import TUMOR_CLASSES

_INDEX = {c: i for i, c in enumerate(TUMOR_CLASSES)}


@dataclass
class EvalReport:
    confusion: list[list[int]]  # rows = truth (A, O, G), cols = predicted
    f1_micro: float
    f1_macro: float
    kappa: float
    balanced_accuracy: float
    n_cases: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_order"] = list(TUMOR_CLASSES)
        return d


def confusion_matrix(truth, pred) -> np.ndarray:
    truth = list(truth)
    pred = list(pred)
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if not truth:
        raise ValueError("empty label lists")
    cm = np.zeros((3, 3), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in _INDEX or p not in _INDEX:
            raise ValueError(f"unknown label in pair ({t!r}, {p!r}); expected one of {TUMOR_CLASSES}")
        cm[_INDEX[t], _INDEX[p]] += 1
    return cm


def _check_confusion(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    if cm.shape != (3, 3) or cm.sum() < 1:
        raise ValueError(f"expected a non-empty 3x3 confusion matrix, got shape {cm.shape}")
    return cm


def f1_scores(cm) -> tuple[float, float]:
    """(micro, macro) F1. Per-class F1 is 0 when precision + recall is 0."""
    cm = _check_confusion(cm)
    n = cm.sum()
    micro = float(np.trace(cm) / n)

    per_class = []
    for c in range(3):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        per_class.append(0.0 if denom == 0 else 2 * tp / denom)
    return micro, float(np.mean(per_class))


def cohens_kappa(cm) -> float:
    cm = _check_confusion(cm)
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    if p_e >= 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def balanced_accuracy(cm) -> float:
    """Unweighted mean recall over classes present in the truth."""
    cm = _check_confusion(cm)
    row_sums = cm.sum(axis=1)
    recalls = [cm[c, c] / row_sums[c] for c in range(3) if row_sums[c] > 0]
    return float(np.mean(recalls))


def evaluate(truth, pred) -> EvalReport:
    cm = confusion_matrix(truth, pred)
    micro, macro = f1_scores(cm)
    return EvalReport(
        confusion=cm.astype(int).tolist(),
        f1_micro=micro,
        f1_macro=macro,
        kappa=cohens_kappa(cm),
        balanced_accuracy=balanced_accuracy(cm),
        n_cases=int(cm.sum()),
    )
