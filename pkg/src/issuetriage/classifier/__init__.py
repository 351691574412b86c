"""Two text-classifier backends (linear bag-of-subwords and a toy
transformer encoder) with multi-label and multi-class heads."""

from .bundle import (ModelBundle, Prediction, attention_maps, compute_loss,
                     encode_for_model, forward, init_model, predict_probs)
from .config import (BACKEND_LINEAR, BACKEND_TRANSFORMER, DEFAULT_LR,
                     TASK_MULTICLASS, TASK_MULTILABEL, EncoderConfig,
                     LinearConfig, TaskConfig, TrainConfig)
from .linear import BagFeatures, featurize_text
from .serialize import (bundle_fingerprint, from_bytes, load_model, save_model,
                        to_bytes)
from .training import batch_loss_and_grads, train

__all__ = [
    "BACKEND_LINEAR", "BACKEND_TRANSFORMER", "DEFAULT_LR",
    "TASK_MULTICLASS", "TASK_MULTILABEL",
    "BagFeatures", "EncoderConfig", "LinearConfig", "ModelBundle",
    "Prediction", "TaskConfig", "TrainConfig",
    "attention_maps", "batch_loss_and_grads", "bundle_fingerprint",
    "compute_loss", "encode_for_model", "featurize_text", "forward",
    "from_bytes", "init_model", "load_model", "predict_probs", "save_model",
    "to_bytes", "train",
]
