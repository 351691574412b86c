"""Turn classifier probabilities into actionable decisions: which
labels to apply and which developer (if any) to assign."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .classifier import ModelBundle, Prediction, encode_for_model, forward
from .corpus import CATEGORIES
from .errors import ConfigError

COLD_START_WARNING = "cold-start: no assignment model available, labels only"


@dataclass
class TriagePolicy:
    """Decision rules layered on top of raw probabilities.

    `assign_min_confidence` 0.0 means always assign (argmax); anything
    higher allows abstaining on low-confidence issues.
    """

    label_threshold: float = 0.5
    assign_enabled: bool = False
    assign_min_confidence: float = 0.0
    roster: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.label_threshold <= 1.0:
            raise ConfigError("label_threshold must be in (0, 1]")
        if not 0.0 <= self.assign_min_confidence <= 1.0:
            raise ConfigError("assign_min_confidence must be in [0, 1]")
        if self.assign_enabled and not self.roster:
            raise ConfigError("assignment enabled but the roster is empty")

    def to_json(self) -> str:
        return json.dumps({"label_threshold": self.label_threshold,
                           "assign_enabled": self.assign_enabled,
                           "assign_min_confidence": self.assign_min_confidence,
                           "roster": list(self.roster)})

    @classmethod
    def from_json(cls, text: str) -> "TriagePolicy":
        obj = json.loads(text)
        return cls(label_threshold=float(obj["label_threshold"]),
                   assign_enabled=bool(obj["assign_enabled"]),
                   assign_min_confidence=float(obj["assign_min_confidence"]),
                   roster=list(obj["roster"]))

    @classmethod
    def load(cls, path) -> "TriagePolicy":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


@dataclass
class TriageDecision:
    """What the service will apply to one issue."""

    labels: list[tuple[str, float]]
    assignee: tuple[str, float] | None
    model_versions: dict[str, str]
    warnings: list[str] = field(default_factory=list)


def decision_to_dict(decision: TriageDecision) -> dict:
    """JSON-friendly view of a decision, used by the CLI and the service."""
    return {
        "labels": [{"name": name, "confidence": conf}
                   for name, conf in decision.labels],
        "assignee": (None if decision.assignee is None
                     else {"login": decision.assignee[0],
                           "confidence": decision.assignee[1]}),
        "model_versions": decision.model_versions,
        "warnings": decision.warnings,
    }


def decide_labels(pred: Prediction, policy: TriagePolicy,
                  label_names=CATEGORIES) -> list[tuple[str, float]]:
    """Categories at or above the threshold, highest confidence first."""
    probs = pred.probs
    if len(probs) != len(label_names):
        raise ConfigError(f"{len(probs)} outputs for {len(label_names)} labels")
    chosen = [(name, float(p)) for name, p in zip(label_names, probs)
              if p >= policy.label_threshold]
    order = {name: i for i, name in enumerate(label_names)}
    chosen.sort(key=lambda item: (-item[1], order[item[0]]))
    return chosen


def decide_assignee(pred: Prediction, policy: TriagePolicy):
    """Argmax over the roster; ties go to the lowest roster index.

    Returns None (abstain) when the best probability falls below
    `assign_min_confidence`.
    """
    probs = pred.probs
    if len(probs) != len(policy.roster):
        raise ConfigError(
            f"{len(probs)} outputs for a roster of {len(policy.roster)}")
    best = int(probs.argmax())
    confidence = float(probs[best])
    if confidence < policy.assign_min_confidence:
        return None
    return policy.roster[best], confidence


def triage_issue(title: str, body: str, label_model: ModelBundle,
                 assign_model: ModelBundle | None, policy: TriagePolicy,
                 allow_cold_start: bool = False) -> TriageDecision:
    """Encode, predict and decide for both heads. Pure given the models.

    With `allow_cold_start` a missing assignment model degrades to a
    label-only decision carrying a warning instead of raising.
    """
    warnings: list[str] = []
    label_pred = forward(label_model, encode_for_model(label_model, title, body))
    labels = decide_labels(label_pred, policy,
                           label_names=label_model.task_config.label_names)
    versions = {"labels": label_model.fingerprint()}

    assignee = None
    if policy.assign_enabled:
        if assign_model is None:
            if not allow_cold_start:
                raise ConfigError(
                    "assignment enabled but no assignment model was provided")
            warnings.append(COLD_START_WARNING)
        else:
            assign_pred = forward(
                assign_model, encode_for_model(assign_model, title, body))
            assignee = decide_assignee(assign_pred, policy)
            versions["assignee"] = assign_model.fingerprint()
    return TriageDecision(labels=labels, assignee=assignee,
                          model_versions=versions, warnings=warnings)
