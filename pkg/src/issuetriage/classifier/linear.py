"""Linear bag-of-subwords backend: average of word and hashed-n-gram
embeddings, then an affine head. fastText-flavored, trained from
scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import textproc
from .config import LinearConfig
from ..textproc import Vocabulary


@dataclass(frozen=True)
class BagFeatures:
    """Word ids plus hashed n-gram bucket indices (with multiplicity)."""

    word_ids: tuple[int, ...]
    bucket_ids: tuple[int, ...]


def featurize_text(text: str, vocab: Vocabulary, cfg: LinearConfig) -> BagFeatures:
    """Normalize and turn a document into bag features."""
    normalized = textproc.normalize_text(text)
    word_ids = tuple(vocab.lookup(w) for w in normalized.split())
    grams = textproc.hash_ngrams(normalized, (cfg.ngram_min, cfg.ngram_max),
                                 cfg.buckets)
    bucket_ids = tuple(b for b, c in sorted(grams.items()) for _ in range(c))
    return BagFeatures(word_ids=word_ids, bucket_ids=bucket_ids)


def init_weights(vocab_size: int, cfg: LinearConfig, num_outputs: int,
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    rows = vocab_size + cfg.buckets
    embed = rng.uniform(-0.05, 0.05, size=(rows, cfg.dim))
    limit = np.sqrt(6.0 / (cfg.dim + num_outputs))
    w_out = rng.uniform(-limit, limit, size=(cfg.dim, num_outputs))
    b_out = np.zeros(num_outputs)
    return {"embed": embed.astype(np.float32),
            "w_out": w_out.astype(np.float32),
            "b_out": b_out.astype(np.float32)}


def _gather_ids(feats: BagFeatures, vocab_size: int) -> np.ndarray:
    ids = list(feats.word_ids) + [vocab_size + b for b in feats.bucket_ids]
    # Canonical order makes the float sum independent of word order.
    return np.sort(np.asarray(ids, dtype=np.int64))


def forward(params: dict[str, np.ndarray], feats: BagFeatures,
            vocab_size: int) -> tuple[np.ndarray, dict]:
    """Logits for one document; returns (logits, cache for backward)."""
    ids = _gather_ids(feats, vocab_size)
    if ids.size:
        doc_vec = params["embed"][ids].sum(axis=0) / ids.size
    else:
        doc_vec = np.zeros(params["embed"].shape[1])
    logits = doc_vec @ params["w_out"] + params["b_out"]
    return logits, {"ids": ids, "doc_vec": doc_vec}


def backward(params: dict[str, np.ndarray], cache: dict, dlogits: np.ndarray,
             grads: dict[str, np.ndarray]) -> None:
    """Accumulate parameter gradients for one document into `grads`."""
    ids, doc_vec = cache["ids"], cache["doc_vec"]
    grads["w_out"] += np.outer(doc_vec, dlogits)
    grads["b_out"] += dlogits
    if ids.size:
        dvec = params["w_out"] @ dlogits
        np.add.at(grads["embed"], ids, dvec / ids.size)
