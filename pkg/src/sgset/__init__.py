"""sgset: scene-graph generation as one-stage set prediction.

A desk-scale but complete implementation of a unified triplet decoder with
task-specific queries, Hungarian set matching with cross-layer cost
aggregation, one-to-many group assignment, and the full scene-graph metric
suite (R@K, mR@K, hR@K, zero-shot and no-graph-constraint recall, entity
AP@50), trained and verified on a deterministic synthetic dataset.
"""

from .tensor import Tensor, ShapeError, NumericError, no_grad, rng
from .gradcheck import GradReport, finite_diff_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import ModelConfig, SceneGraphModel, published_config
from .decoder import DecoderVariant, TripletPredictions, count_parameters

__version__ = "0.1.0"

__all__ = [
    "Tensor", "ShapeError", "NumericError", "no_grad", "rng",
    "GradReport", "finite_diff_check",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ModelConfig", "SceneGraphModel", "published_config",
    "DecoderVariant", "TripletPredictions", "count_parameters",
    "__version__",
]
