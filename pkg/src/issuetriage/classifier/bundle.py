"""Model container and the operations shared by both backends:
initialization, forward inference, losses, and batch prediction.

A finalized bundle stores float32 weights; every forward pass upcasts
to float64, so predictions are bit-identical before and after a
save/load round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linear as linear_backend
from . import transformer as transformer_backend
from .config import (BACKEND_LINEAR, BACKEND_TRANSFORMER, TASK_MULTILABEL,
                     EncoderConfig, LinearConfig, TaskConfig, TrainConfig)
from .linear import BagFeatures, featurize_text
from ..corpus import LabelVector
from ..errors import ConfigError, LabelSpaceMismatchError
from ..textproc import TokenSequence, Vocabulary, concat_title_body, encode_sequence

PROB_EPS = 1e-12
MODEL_FORMAT_VERSION = 1


@dataclass
class Prediction:
    """Per-output probabilities: independent sigmoids for the label task,
    a softmax distribution for the assignment task."""

    probs: np.ndarray


@dataclass
class ModelBundle:
    backend: str
    task_config: TaskConfig
    encoder_config: EncoderConfig | None
    linear_config: LinearConfig | None
    vocabulary: Vocabulary
    weights: dict[str, np.ndarray]
    version: int = MODEL_FORMAT_VERSION
    train_config: TrainConfig | None = None
    _params64: dict[str, np.ndarray] | None = field(
        default=None, repr=False, compare=False)
    _fingerprint: str | None = field(default=None, repr=False, compare=False)

    @property
    def num_outputs(self) -> int:
        return self.task_config.num_outputs

    @property
    def max_seq_len(self) -> int:
        return self.train_config.max_seq_len if self.train_config else 128

    def params64(self) -> dict[str, np.ndarray]:
        """Float64 view of the weights, cached; bundles are immutable."""
        if self._params64 is None:
            self._params64 = {k: v.astype(np.float64)
                              for k, v in self.weights.items()}
        return self._params64

    def fingerprint(self) -> str:
        """Content hash of the serialized bundle, for decision records."""
        if self._fingerprint is None:
            from .serialize import bundle_fingerprint
            self._fingerprint = bundle_fingerprint(self)
        return self._fingerprint


def init_model(backend: str, task_config: TaskConfig, vocab: Vocabulary,
               seed: int = 0, encoder_config: EncoderConfig | None = None,
               linear_config: LinearConfig | None = None) -> ModelBundle:
    """Seeded weight init: uniform(-0.05, 0.05) embeddings, Glorot
    matrices, zero biases."""
    rng = np.random.default_rng(seed)
    if backend == BACKEND_TRANSFORMER:
        encoder_config = encoder_config or EncoderConfig()
        weights = transformer_backend.init_weights(
            vocab.size, encoder_config, task_config.num_outputs, rng)
        linear_config = None
    elif backend == BACKEND_LINEAR:
        linear_config = linear_config or LinearConfig()
        weights = linear_backend.init_weights(
            vocab.size, linear_config, task_config.num_outputs, rng)
        encoder_config = None
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    return ModelBundle(backend=backend, task_config=task_config,
                       encoder_config=encoder_config, linear_config=linear_config,
                       vocabulary=vocab, weights=weights)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def head_probs(logits: np.ndarray, task: str) -> np.ndarray:
    if task == TASK_MULTILABEL:
        return np.clip(stable_sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
    return stable_softmax(logits)


def seq_arrays(seq: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(seq.ids, dtype=np.int64)[None, :]
    mask = np.asarray(seq.mask, dtype=np.float64)[None, :]
    return ids, mask


def _check_input(model: ModelBundle, x) -> None:
    if model.backend == BACKEND_TRANSFORMER:
        if not isinstance(x, TokenSequence):
            raise ConfigError("transformer backend expects a TokenSequence")
        if x.ids and max(x.ids) >= model.vocabulary.size:
            raise LabelSpaceMismatchError(
                "token ids exceed the model's vocabulary; "
                "was the input encoded with a different vocabulary?")
    else:
        if not isinstance(x, BagFeatures):
            raise ConfigError("linear backend expects BagFeatures")
        if x.word_ids and max(x.word_ids) >= model.vocabulary.size:
            raise LabelSpaceMismatchError(
                "word ids exceed the model's vocabulary; "
                "was the input featurized with a different vocabulary?")
        if x.bucket_ids and max(x.bucket_ids) >= model.linear_config.buckets:
            raise LabelSpaceMismatchError("n-gram bucket out of range")


def forward(model: ModelBundle, x) -> Prediction:
    """Probabilities for one input; inference only, no dropout."""
    _check_input(model, x)
    params = model.params64()
    if model.backend == BACKEND_TRANSFORMER:
        ids, mask = seq_arrays(x)
        logits, _ = transformer_backend.forward_batch(
            params, model.encoder_config, ids, mask)
        logits = logits[0]
    else:
        logits, _ = linear_backend.forward(params, x, model.vocabulary.size)
    return Prediction(probs=head_probs(logits, model.task_config.task))


def predict_probs(model: ModelBundle, inputs) -> list[Prediction]:
    """Map `forward` over a batch; pure, weights untouched."""
    return [forward(model, x) for x in inputs]


def attention_maps(model: ModelBundle, seq: TokenSequence) -> list[np.ndarray]:
    """Per-layer attention weights (heads, T, T) for one sequence."""
    if model.backend != BACKEND_TRANSFORMER:
        raise ConfigError("attention maps exist only for the transformer backend")
    _check_input(model, seq)
    ids, mask = seq_arrays(seq)
    _, cache = transformer_backend.forward_batch(
        model.params64(), model.encoder_config, ids, mask)
    return [layer["attn"][0] for layer in cache["layers"]]


def _truth_array(truth) -> np.ndarray:
    if isinstance(truth, LabelVector):
        return np.asarray(truth.as_tuple(), dtype=np.float64)
    return np.asarray(truth, dtype=np.float64)


def compute_loss(pred: Prediction, truth) -> float:
    """Mean binary cross-entropy (multilabel truth) or negative log
    probability of the true class (integer truth)."""
    p = np.asarray(pred.probs, dtype=np.float64)
    if isinstance(truth, (int, np.integer)) and not isinstance(truth, bool):
        if not 0 <= truth < p.shape[-1]:
            raise ValueError(f"class index {truth} out of range for {p.shape[-1]}")
        return float(-np.log(max(p[truth], PROB_EPS)))
    y = _truth_array(truth)
    if y.shape != p.shape:
        raise ValueError(f"truth shape {y.shape} != prediction shape {p.shape}")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    bce = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return float(bce.mean())


def encode_for_model(model: ModelBundle, title: str, body: str):
    """Title+body concatenation encoded the way this bundle expects."""
    text = concat_title_body(title, body)
    if model.backend == BACKEND_TRANSFORMER:
        return encode_sequence(text, model.vocabulary, model.max_seq_len)
    return featurize_text(text, model.vocabulary, model.linear_config)
