"""Overhead and effectiveness metrics.

Data overhead is the aggregate ratio of injected to real packets over the
whole dataset (a per-trace mean is also available for the detailed report).
Time overhead compares final timestamps and is identically zero for
injector-produced datasets. Open-world evaluation sweeps a confidence
threshold from 0.1 to 0.9 and integrates the precision-recall points with
the trapezoid rule, extending the curve to recall 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .classifier import SoftmaxModel, TamConfig, feature_matrix, predict_proba
from .traces import LabeledDataset

_LOGGER = logging.getLogger(__name__)

SWEEP_THRESHOLDS = tuple(np.linspace(0.1, 0.9, 9))


class PRPoint(NamedTuple):
    threshold: float
    precision: float
    recall: float


@dataclass
class EvalReport:
    data_overhead: float | None = None  # percent
    data_overhead_per_trace: float | None = None  # percent, mean of per-trace ratios
    time_overhead: float | None = None  # percent
    clean_accuracy: float | None = None  # percent
    red_pill_target_rate: float | None = None  # percent
    pr_points: list[PRPoint] = field(default_factory=list)
    map_score: float | None = None
    extra: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        values: dict[str, object] = {}
        for key in (
            "data_overhead",
            "data_overhead_per_trace",
            "time_overhead",
            "clean_accuracy",
            "red_pill_target_rate",
            "map_score",
        ):
            value = getattr(self, key)
            if value is not None:
                values[key] = value
        values.update(self.extra)
        lines = [f"{key}={repr(float(values[key]))}" for key in sorted(values)]
        return "\n".join(lines) + "\n"

    def pr_csv(self) -> str:
        lines = ["threshold,precision,recall"]
        for p in self.pr_points:
            lines.append(f"{repr(float(p.threshold))},{repr(float(p.precision))},{repr(float(p.recall))}")
        return "\n".join(lines) + "\n"


def _check_aligned(before: LabeledDataset, after: LabeledDataset) -> None:
    if len(before) != len(after):
        raise ValueError("datasets are misaligned: entry counts differ")
    for b, a in zip(before.entries, after.entries):
        if b.name != a.name or b.label != a.label:
            raise ValueError(f"datasets are misaligned at entry {b.name!r}")


def data_overhead(before: LabeledDataset, after: LabeledDataset) -> float:
    """Injected packets / real packets over the whole dataset, in percent."""
    _check_aligned(before, after)
    real = sum(len(b.trace) for b in before.entries)
    inserted = sum(len(a.trace) - len(b.trace) for b, a in zip(before.entries, after.entries))
    if any(len(a.trace) < len(b.trace) for b, a in zip(before.entries, after.entries)):
        raise ValueError("after-dataset has fewer events than before-dataset")
    if real == 0:
        raise ValueError("before-dataset has no packets")
    return 100.0 * inserted / real


def data_overhead_per_trace(before: LabeledDataset, after: LabeledDataset) -> float:
    """Mean of per-trace injected/real ratios, in percent (report companion)."""
    _check_aligned(before, after)
    ratios = [
        (len(a.trace) - len(b.trace)) / len(b.trace)
        for b, a in zip(before.entries, after.entries)
    ]
    return 100.0 * float(np.mean(ratios))


def time_overhead(before: LabeledDataset, after: LabeledDataset) -> float:
    """Added page-load time over baseline load time, in percent.

    Zero by construction for injector output; degenerate zero-duration
    baselines return 0.0 with a logged flag.
    """
    _check_aligned(before, after)
    base = sum(b.trace.duration() for b in before.entries)
    added = sum(a.trace.duration() - b.trace.duration() for b, a in zip(before.entries, after.entries))
    if base == 0.0:
        _LOGGER.warning("time_overhead: zero baseline duration, reporting 0%%")
        return 0.0
    return 100.0 * added / base


def closed_world_accuracy(model: SoftmaxModel, dataset: LabeledDataset, tam: TamConfig) -> float:
    """Percentage of correct predictions over a non-empty evaluation set."""
    if len(dataset) == 0:
        raise ValueError("evaluation set is empty")
    feats, labels = feature_matrix(dataset, tam)
    preds = np.argmax(predict_proba(model, feats), axis=1)
    return 100.0 * float(np.mean(preds == labels))


def pr_points_from_scores(
    probs: np.ndarray,
    labels: np.ndarray,
    monitored: Sequence[int],
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
) -> list[PRPoint]:
    """PR points over confidence thresholds.

    A prediction counts as monitored when its top probability passes the
    threshold and the argmax class is monitored; a true positive also needs
    the argmax to equal the (monitored) true label. Precision of an empty
    prediction set is 1.0 by convention so sweeps stay monotone.
    """
    monitored = np.asarray(sorted(set(int(c) for c in monitored)))
    labels = np.asarray(labels)
    is_mon_truth = np.isin(labels, monitored)
    n_mon = int(is_mon_truth.sum())
    if n_mon == 0:
        raise ValueError("evaluation set has no monitored entries")

    top = probs.max(axis=1)
    argmax = probs.argmax(axis=1)
    pred_mon_class = np.isin(argmax, monitored)
    points = []
    for th in thresholds:
        predicted = (top >= th) & pred_mon_class
        tp = int(np.sum(predicted & (argmax == labels) & is_mon_truth))
        fp = int(predicted.sum()) - tp
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / n_mon
        points.append(PRPoint(float(th), float(precision), float(recall)))
    return points


def average_precision(points: Sequence[PRPoint]) -> float:
    """Trapezoidal area under the PR points, extended to recall 0."""
    if not points:
        return 0.0
    ordered = sorted(points, key=lambda p: p.recall)
    recalls = [0.0] + [p.recall for p in ordered]
    precisions = [ordered[0].precision] + [p.precision for p in ordered]
    area = 0.0
    for i in range(1, len(recalls)):
        area += (recalls[i] - recalls[i - 1]) * (precisions[i] + precisions[i - 1]) / 2.0
    return float(area)


def pr_sweep(
    model: SoftmaxModel,
    dataset: LabeledDataset,
    monitored: Sequence[int],
    tam: TamConfig,
    thresholds: Sequence[float] = SWEEP_THRESHOLDS,
) -> tuple[list[PRPoint], float]:
    feats, labels = feature_matrix(dataset, tam)
    probs = predict_proba(model, feats)
    points = pr_points_from_scores(probs, labels, monitored, thresholds)
    return points, average_precision(points)


def mean_average_precision(aps: Sequence[float]) -> float:
    if len(aps) == 0:
        raise ValueError("no AP values to average")
    return float(np.mean(aps))


def check_pr_monotone(points: Sequence[PRPoint]) -> bool:
    """True when precision/recall move monotonically as the threshold drops."""
    ordered = sorted(points, key=lambda p: -p.threshold)
    recalls = [p.recall for p in ordered]
    precisions = [p.precision for p in ordered]
    recall_ok = all(r2 >= r1 - 1e-12 for r1, r2 in zip(recalls, recalls[1:]))
    precision_ok = all(p2 <= p1 + 1e-12 for p1, p2 in zip(precisions, precisions[1:]))
    return recall_ok and precision_ok
