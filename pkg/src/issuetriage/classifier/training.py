"""Mini-batch Adam training for both backends.

Deterministic on a single thread: the shuffle order, dropout masks and
update order all derive from one seeded generator, and all math runs
in float64 before the final cast back to stored float32 weights.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import linear as linear_backend
from . import transformer as transformer_backend
from .bundle import (ModelBundle, PROB_EPS, _check_input, stable_sigmoid,
                     stable_softmax)
from .config import BACKEND_TRANSFORMER, TASK_MULTICLASS, TrainConfig
from ..corpus import LabelVector
from ..errors import ConfigError, DivergenceError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _target_rows(truths, task: str, num_outputs: int):
    """Dense targets: (B, K) floats for multilabel, (B,) ints otherwise."""
    if task == TASK_MULTICLASS:
        idx = np.asarray(truths, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= num_outputs):
            raise ValueError("class index out of range for the roster")
        return idx
    rows = []
    for t in truths:
        rows.append(t.as_tuple() if isinstance(t, LabelVector) else tuple(t))
    return np.asarray(rows, dtype=np.float64)


def _losses_and_dlogits(logits: np.ndarray, targets, task: str):
    """Per-instance losses and d(mean batch loss)/dlogits."""
    batch = logits.shape[0]
    if task == TASK_MULTICLASS:
        probs = stable_softmax(logits)
        picked = probs[np.arange(batch), targets]
        losses = -np.log(np.maximum(picked, PROB_EPS))
        dlogits = probs.copy()
        dlogits[np.arange(batch), targets] -= 1.0
        dlogits /= batch
    else:
        probs = stable_sigmoid(logits)
        clipped = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
        bce = -(targets * np.log(clipped) + (1.0 - targets) * np.log(1.0 - clipped))
        losses = bce.mean(axis=1)
        dlogits = (probs - targets) / (logits.shape[1] * batch)
    return losses, dlogits


def batch_loss_and_grads(model: ModelBundle, params: dict[str, np.ndarray],
                         inputs, truths,
                         dropout_rng: np.random.Generator | None = None):
    """Mean loss over one batch and its exact parameter gradients.

    `params` is the float64 working copy of the weights; the returned
    grads dict shares its keys.
    """
    task = model.task_config.task
    targets = _target_rows(truths, task, model.num_outputs)
    if model.backend == BACKEND_TRANSFORMER:
        lengths = {len(x.ids) for x in inputs}
        if len(lengths) > 1:
            raise ConfigError("all sequences in a batch must share max_seq_len")
        ids = np.asarray([x.ids for x in inputs], dtype=np.int64)
        mask = np.asarray([x.mask for x in inputs], dtype=np.float64)
        logits, cache = transformer_backend.forward_batch(
            params, model.encoder_config, ids, mask, dropout_rng=dropout_rng)
        losses, dlogits = _losses_and_dlogits(logits, targets, task)
        grads = transformer_backend.backward_batch(
            params, model.encoder_config, cache, dlogits)
        return float(losses.mean()), grads

    grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    vocab_size = model.vocabulary.size
    total = 0.0
    for i, feats in enumerate(inputs):
        logits, cache = linear_backend.forward(params, feats, vocab_size)
        target_i = targets[i:i + 1]
        losses, dlogits = _losses_and_dlogits(logits[None, :], target_i, task)
        # dlogits already carries the 1/1 batch factor; rescale to 1/B.
        linear_backend.backward(params, cache, dlogits[0] / len(inputs), grads)
        total += float(losses[0])
    return total / len(inputs), grads


def train(model: ModelBundle, dataset, cfg: TrainConfig):
    """Train a fresh bundle on (input, truth) pairs.

    Returns (trained bundle, per-epoch mean losses). The input bundle
    is left untouched.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for x, _ in dataset:
        _check_input(model, x)
    # Up-front target validation so bad class indices fail before epoch 1.
    _target_rows([t for _, t in dataset], model.task_config.task,
                 model.num_outputs)

    master = {k: v.astype(np.float64) for k, v in model.weights.items()}
    moment1 = {k: np.zeros_like(v) for k, v in master.items()}
    moment2 = {k: np.zeros_like(v) for k, v in master.items()}
    step = 0
    rng = np.random.default_rng(cfg.seed)
    use_dropout = (model.backend == BACKEND_TRANSFORMER
                   and model.encoder_config.dropout > 0.0)

    n = len(dataset)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            batch_idx = perm[start:start + cfg.batch_size]
            inputs = [dataset[i][0] for i in batch_idx]
            truths = [dataset[i][1] for i in batch_idx]
            loss, grads = batch_loss_and_grads(
                model, master, inputs, truths,
                dropout_rng=rng if use_dropout else None)
            if not np.isfinite(loss):
                raise DivergenceError(epoch=epoch, batch=batch_no)
            epoch_loss += loss * len(batch_idx)
            step += 1
            bias1 = 1.0 - ADAM_BETA1 ** step
            bias2 = 1.0 - ADAM_BETA2 ** step
            for name, grad in grads.items():
                m = moment1[name]
                v = moment2[name]
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * grad
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * grad * grad
                master[name] -= cfg.learning_rate * (m / bias1) / (
                    np.sqrt(v / bias2) + ADAM_EPS)
        history.append(epoch_loss / n)

    trained = dataclasses.replace(
        model,
        weights={k: v.astype(np.float32) for k, v in master.items()},
        train_config=cfg,
        _params64=None,
        _fingerprint=None,
    )
    return trained, history
