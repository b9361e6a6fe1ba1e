"""Confusion matrices, precision-recall curves and the metrics report."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

EPOCH_COLUMNS = [
    "epoch",
    "lr",
    "train_affinity",
    "train_partition",
    "train_classification",
    "train_total",
    "train_accuracy",
    "eval_affinity",
    "eval_partition",
    "eval_classification",
    "eval_total",
    "eval_accuracy",
    "eval_head_overlap",
    "eval_center_distance",
]


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def precision_recall_curve(scores, positives) -> dict[str, list[float]]:
    """One-vs-rest curve: one point per distinct score, thresholds descending.

    At threshold t a sample is predicted positive when ``score >= t``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positives[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # last index of each run of tied scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    n_pos = int(positives.sum())
    tp_at = tp[last].astype(np.float64)
    fp_at = fp[last].astype(np.float64)
    precision = tp_at / (tp_at + fp_at)
    recall = tp_at / n_pos if n_pos else np.zeros_like(tp_at)
    return {"threshold": s[last].tolist(), "precision": precision.tolist(), "recall": recall.tolist()}


def average_precision(curve: dict[str, list[float]]) -> float:
    r = np.r_[0.0, curve["recall"]]
    p = np.asarray(curve["precision"])
    return float(np.sum((r[1:] - r[:-1]) * p))


@dataclass
class MetricsReport:
    num_samples: int = 0
    losses: dict[str, float] = field(default_factory=dict)
    accuracy: float = 0.0
    confusion: list[list[int]] = field(default_factory=list)
    pr_curves: list[dict] = field(default_factory=list)
    average_precision: list[float] = field(default_factory=list)
    head_overlap: Optional[list[list[float]]] = None
    mean_head_overlap: Optional[float] = None
    center_distance: Optional[float] = None
    class_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(
    labels: np.ndarray,
    scores: np.ndarray,
    class_names: list[str],
    losses: dict[str, float],
    head_overlap: Optional[np.ndarray] = None,
    center_distance: Optional[float] = None,
) -> MetricsReport:
    n = len(class_names)
    predictions = scores.argmax(axis=1)
    cm = confusion_matrix(labels, predictions, n)
    curves = [precision_recall_curve(scores[:, k], labels == k) for k in range(n)]
    overlap = None
    mean_overlap = None
    if head_overlap is not None:
        K = head_overlap.shape[0]
        overlap = head_overlap.tolist()
        mean_overlap = float((head_overlap.sum() - np.trace(head_overlap)) / (K * (K - 1)))
    return MetricsReport(
        num_samples=int(len(labels)),
        losses=dict(losses),
        accuracy=accuracy_from_confusion(cm),
        confusion=cm.tolist(),
        pr_curves=curves,
        average_precision=[average_precision(c) for c in curves],
        head_overlap=overlap,
        mean_head_overlap=mean_overlap,
        center_distance=center_distance,
        class_names=list(class_names),
    )


class EpochLog:
    """Appends one CSV row per epoch; floats are written with ``repr`` so they round-trip."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(EPOCH_COLUMNS)
        self.rows: list[dict] = []

    def append(self, row: dict) -> None:
        self.rows.append(row)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_cell(row.get(c)) for c in EPOCH_COLUMNS])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_epoch_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (int(v) if k == "epoch" else (float(v) if v != "" else None)) for k, v in row.items()})
    return out
