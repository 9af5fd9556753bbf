"""Multimodal glioma sub-typing pipeline.

Per-modality densely connected classifiers over histology tiles and MRI
slices, weighted-vote aggregation to slide/volume level, cross-modality
fusion, and challenge metrics.
"""

from .dcn import CLASS_ORDER, TUMOR_CLASSES, DcnConfig, build_dcn, dcn1_config, dcn2_config
from .ensemble import CaseDecision, Prediction, aggregate_slices, aggregate_tiles, fuse_modalities
from .metrics import EvalReport, evaluate
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "CLASS_ORDER",
    "TUMOR_CLASSES",
    "DcnConfig",
    "build_dcn",
    "dcn1_config",
    "dcn2_config",
    "CaseDecision",
    "Prediction",
    "aggregate_tiles",
    "aggregate_slices",
    "fuse_modalities",
    "EvalReport",
    "evaluate",
    "Tensor",
    "__version__",
]
