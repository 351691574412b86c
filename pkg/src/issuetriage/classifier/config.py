"""Configuration types for the classifier backends."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError

BACKEND_LINEAR = "linear"
BACKEND_TRANSFORMER = "transformer"

TASK_MULTILABEL = "multilabel3"
TASK_MULTICLASS = "multiclassK"

# Per-backend default learning rates; the linear baseline needs a much
# larger step than the transformer.
DEFAULT_LR = {BACKEND_TRANSFORMER: 4e-5, BACKEND_LINEAR: 0.1}


@dataclass
class TaskConfig:
    task: str
    num_outputs: int
    label_names: list[str]

    def __post_init__(self):
        if self.task not in (TASK_MULTILABEL, TASK_MULTICLASS):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.num_outputs != len(self.label_names):
            raise ConfigError("num_outputs must equal len(label_names)")
        if self.task == TASK_MULTILABEL and self.num_outputs != 3:
            raise ConfigError("multilabel task has exactly 3 outputs")
        if self.task == TASK_MULTICLASS and self.num_outputs < 2:
            raise ConfigError("multiclass task needs at least 2 classes")

    @classmethod
    def multilabel(cls, label_names=("bug", "enhancement", "question")) -> "TaskConfig":
        return cls(task=TASK_MULTILABEL, num_outputs=3, label_names=list(label_names))

    @classmethod
    def multiclass(cls, roster) -> "TaskConfig":
        roster = list(roster)
        return cls(task=TASK_MULTICLASS, num_outputs=len(roster), label_names=roster)

    def to_dict(self) -> dict:
        return {"task": self.task, "num_outputs": self.num_outputs,
                "label_names": list(self.label_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskConfig":
        return cls(task=d["task"], num_outputs=int(d["num_outputs"]),
                   label_names=list(d["label_names"]))


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 4e-5
    batch_size: int = 8
    max_seq_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.max_seq_len < 1:
            raise ConfigError("epochs, batch_size and max_seq_len must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "max_seq_len": self.max_seq_len,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(epochs=int(d["epochs"]), learning_rate=float(d["learning_rate"]),
                   batch_size=int(d["batch_size"]), max_seq_len=int(d["max_seq_len"]),
                   seed=int(d["seed"]))


@dataclass
class EncoderConfig:
    """Toy-scale stand-in for the full 12-layer/768-dim reference setup."""

    layers: int = 2
    hidden_dim: int = 64
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.layers, self.hidden_dim, self.heads, self.ff_dim) < 1:
            raise ConfigError("encoder dimensions must be positive")
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def to_dict(self) -> dict:
        return {"layers": self.layers, "hidden_dim": self.hidden_dim,
                "heads": self.heads, "ff_dim": self.ff_dim, "dropout": self.dropout}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(layers=int(d["layers"]), hidden_dim=int(d["hidden_dim"]),
                   heads=int(d["heads"]), ff_dim=int(d["ff_dim"]),
                   dropout=float(d["dropout"]))


@dataclass
class LinearConfig:
    """Bag-of-subwords feature space for the linear backend."""

    dim: int = 32
    buckets: int = 1 << 16
    ngram_min: int = 2
    ngram_max: int = 4

    def __post_init__(self):
        if self.dim < 1 or self.buckets < 1:
            raise ConfigError("dim and buckets must be positive")
        if self.ngram_min < 1 or self.ngram_max < self.ngram_min:
            raise ConfigError("invalid n-gram range")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "buckets": self.buckets,
                "ngram_min": self.ngram_min, "ngram_max": self.ngram_max}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearConfig":
        return cls(dim=int(d["dim"]), buckets=int(d["buckets"]),
                   ngram_min=int(d["ngram_min"]), ngram_max=int(d["ngram_max"]))
