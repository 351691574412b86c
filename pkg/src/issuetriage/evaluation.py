"""Per-class and macro precision/recall/F1, plus report rendering.

Zero denominators yield 0 by convention. Percent rendering rounds
half-up on the decimal value, so 0.785 prints as 79%.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .corpus import CATEGORIES, LabelVector
from .errors import LabelSpaceMismatchError
from .classifier import (TASK_MULTILABEL, ModelBundle, encode_for_model,
                         predict_probs)
from .triage import TriagePolicy, decide_labels


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


@dataclass
class ConfusionCounts:
    """One-vs-rest counts per class over a fixed instance set."""

    classes: list[str]
    per_class: dict[str, ClassCounts]
    n_instances: int


@dataclass
class MetricTriple:
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    task: str
    n_instances: int
    threshold: float | None
    per_class: dict[str, MetricTriple]
    macro: MetricTriple
    micro: MetricTriple
    weighted: MetricTriple
    counts: ConfusionCounts


def confusion_multilabel(preds, truths) -> ConfusionCounts:
    """One-vs-rest counts over the three categories."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} preds, {len(truths)} truths")
    if not preds:
        raise ValueError("no instances to evaluate")
    per = {c: ClassCounts() for c in CATEGORIES}
    for pred, truth in zip(preds, truths):
        for cat, p, t in zip(CATEGORIES, pred.as_tuple(), truth.as_tuple()):
            counts = per[cat]
            if p and t:
                counts.tp += 1
            elif p and not t:
                counts.fp += 1
            elif not p and t:
                counts.fn += 1
            else:
                counts.tn += 1
    return ConfusionCounts(classes=list(CATEGORIES), per_class=per,
                           n_instances=len(preds))


def confusion_multiclass(preds, truths, k: int,
                         label_names=None) -> ConfusionCounts:
    """One-vs-rest counts derived from the K-way confusion matrix."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} preds, {len(truths)} truths")
    if not preds:
        raise ValueError("no instances to evaluate")
    names = list(label_names) if label_names is not None else [str(i) for i in range(k)]
    if len(names) != k:
        raise ValueError("label_names length must equal k")
    per = {name: ClassCounts() for name in names}
    for p, t in zip(preds, truths):
        if not (0 <= p < k and 0 <= t < k):
            raise ValueError(f"class index out of range: pred={p} truth={t} k={k}")
        for i, name in enumerate(names):
            counts = per[name]
            if p == i and t == i:
                counts.tp += 1
            elif p == i:
                counts.fp += 1
            elif t == i:
                counts.fn += 1
            else:
                counts.tn += 1
    return ConfusionCounts(classes=names, per_class=per, n_instances=len(preds))


def _prf(tp: int, fp: int, fn: int) -> MetricTriple:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricTriple(precision, recall, f1)


def metrics_from_counts(counts: ConfusionCounts, task: str = "",
                        threshold: float | None = None) -> EvalReport:
    per_class = {name: _prf(c.tp, c.fp, c.fn)
                 for name, c in counts.per_class.items()}
    n_classes = len(counts.classes)
    macro = MetricTriple(
        precision=sum(m.precision for m in per_class.values()) / n_classes,
        recall=sum(m.recall for m in per_class.values()) / n_classes,
        f1=sum(m.f1 for m in per_class.values()) / n_classes,
    )
    micro = _prf(sum(c.tp for c in counts.per_class.values()),
                 sum(c.fp for c in counts.per_class.values()),
                 sum(c.fn for c in counts.per_class.values()))
    support = {name: c.tp + c.fn for name, c in counts.per_class.items()}
    total_support = sum(support.values())
    if total_support:
        weighted = MetricTriple(
            precision=sum(per_class[n].precision * s for n, s in support.items())
            / total_support,
            recall=sum(per_class[n].recall * s for n, s in support.items())
            / total_support,
            f1=sum(per_class[n].f1 * s for n, s in support.items()) / total_support,
        )
    else:
        weighted = MetricTriple(0.0, 0.0, 0.0)
    return EvalReport(task=task, n_instances=counts.n_instances,
                      threshold=threshold, per_class=per_class, macro=macro,
                      micro=micro, weighted=weighted, counts=counts)


def evaluate_model(model: ModelBundle, test_records, policy: TriagePolicy) -> EvalReport:
    """Predict, apply the decision policy, count, and score a test split.

    Multilabel decisions use the policy's label threshold; multiclass
    evaluation always takes the argmax (abstention has no row in a
    confusion matrix), so the report's threshold is null there.
    """
    if not test_records:
        raise ValueError("empty test split")
    inputs = [encode_for_model(model, r.title, r.body) for r in test_records]
    predictions = predict_probs(model, inputs)
    task = model.task_config.task
    if task == TASK_MULTILABEL:
        decided = []
        for pred in predictions:
            names = [name for name, _ in decide_labels(pred, policy)]
            decided.append(LabelVector.from_names(names))
        truths = [r.labels for r in test_records]
        counts = confusion_multilabel(decided, truths)
        return metrics_from_counts(counts, task=task,
                                   threshold=policy.label_threshold)

    roster = model.task_config.label_names
    index = {login: i for i, login in enumerate(roster)}
    truths = []
    for rec in test_records:
        if rec.assignee not in index:
            raise LabelSpaceMismatchError(
                f"assignee {rec.assignee!r} not in the model roster")
        truths.append(index[rec.assignee])
    preds = [int(p.probs.argmax()) for p in predictions]
    counts = confusion_multiclass(preds, truths, k=len(roster), label_names=roster)
    return metrics_from_counts(counts, task=task, threshold=None)


def percent(value: float) -> int:
    """Whole-percent rendering with decimal half-up rounding."""
    return int((Decimal(str(value)) * 100).quantize(Decimal("1"),
                                                    rounding=ROUND_HALF_UP))


_MACRO_ROW = "Macro-Average"


def render_report(report: EvalReport, format: str = "text") -> str:
    if format == "json":
        return _render_json(report)
    if format != "text":
        raise ValueError(f"unknown format {format!r}")
    rows = [(name, report.per_class[name]) for name in report.counts.classes]
    rows.append((_MACRO_ROW, report.macro))
    name_width = max(len(name) for name, _ in rows)
    header = f"{'Class':<{name_width}}  {'Precision':>9}  {'Recall':>6}  {'F1-Score':>8}"
    lines = [header, "-" * len(header)]
    for name, m in rows:
        lines.append(f"{name:<{name_width}}  "
                     f"{percent(m.precision):>8}%  {percent(m.recall):>5}%  "
                     f"{percent(m.f1):>7}%")
    lines.append(f"n = {report.n_instances}"
                 + (f", threshold = {report.threshold}"
                    if report.threshold is not None else ""))
    return "\n".join(lines)


def _render_json(report: EvalReport) -> str:
    per_class = {}
    for name in report.counts.classes:
        m = report.per_class[name]
        c = report.counts.per_class[name]
        per_class[name] = {"p": m.precision, "r": m.recall, "f1": m.f1,
                           "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn}
    obj = {
        "task": report.task,
        "n": report.n_instances,
        "threshold": report.threshold,
        "per_class": per_class,
        "macro": {"p": report.macro.precision, "r": report.macro.recall,
                  "f1": report.macro.f1},
        "micro": {"p": report.micro.precision, "r": report.micro.recall,
                  "f1": report.micro.f1},
        "weighted": {"p": report.weighted.precision, "r": report.weighted.recall,
                     "f1": report.weighted.f1},
    }
    return json.dumps(obj, ensure_ascii=False)


def report_from_json(text: str) -> EvalReport:
    """Inverse of the JSON rendering; exact for finite float values."""
    obj = json.loads(text)
    classes = list(obj["per_class"].keys())
    per = {}
    metrics = {}
    for name, entry in obj["per_class"].items():
        per[name] = ClassCounts(tp=entry["tp"], fp=entry["fp"],
                                fn=entry["fn"], tn=entry["tn"])
        metrics[name] = MetricTriple(entry["p"], entry["r"], entry["f1"])
    counts = ConfusionCounts(classes=classes, per_class=per, n_instances=obj["n"])
    return EvalReport(
        task=obj["task"], n_instances=obj["n"], threshold=obj["threshold"],
        per_class=metrics,
        macro=MetricTriple(obj["macro"]["p"], obj["macro"]["r"], obj["macro"]["f1"]),
        micro=MetricTriple(obj["micro"]["p"], obj["micro"]["r"], obj["micro"]["f1"]),
        weighted=MetricTriple(obj["weighted"]["p"], obj["weighted"]["r"],
                              obj["weighted"]["f1"]),
        counts=counts)
