"""Evaluation battery: confusion matrices, binary and macro-averaged metrics,
rank-statistic AUC, and per-stage error-rate tables.

Zero-denominator conventions are fixed explicitly: precision = 0 when no
positives are predicted, sensitivity = 0 when no positives exist, specificity
= 0 when no negatives exist, F1 = 0 when precision + recall = 0.  All the
arithmetic is deliberately plain Python over exact integer counts so the
brute-force oracles in the test suite can match it exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import AbnormalityType
from .retrieval import RetrievalResult

__all__ = [
    "ConfusionMatrix",
    "ClassMetrics",
    "MetricsReport",
    "confusion",
    "binary_metrics",
    "auc_roc",
    "safe_auc",
    "macro_metrics",
    "stage_error_rates",
    "top1_error_rate",
    "report_to_csv",
]


@dataclass
class ConfusionMatrix:
    """k x k counts; rows are true labels, columns predicted."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def one_vs_rest(self, cls: int) -> "ConfusionMatrix":
        """Collapse to a 2x2 with ``cls`` as the positive class (index 1)."""
        c = self.counts
        tp = int(c[cls, cls])
        fn = int(c[cls].sum() - tp)
        fp = int(c[:, cls].sum() - tp)
        tn = self.total - tp - fn - fp
        return ConfusionMatrix(np.array([[tn, fp], [fn, tp]]))

    def to_json(self) -> list[list[int]]:
        return self.counts.tolist()


def confusion(gold, pred, k: int) -> ConfusionMatrix:
    """Exact counts of (true, predicted) label pairs."""
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} pred")
    counts = np.zeros((k, k), dtype=np.int64)
    for g, p in zip(gold, pred):
        if not (0 <= g < k and 0 <= p < k):
            raise ValueError(f"label out of range [0, {k}): gold={g}, pred={p}")
        counts[g, p] += 1
    return ConfusionMatrix(counts)


@dataclass
class ClassMetrics:
    accuracy: float
    auc_roc: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float

    def to_json(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "auc_roc": self.auc_roc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "f1": self.f1,
        }


def binary_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Accuracy, sensitivity, specificity, precision, F1 from a 2x2 matrix
    (positive class = index 1)."""
    if cm.k != 2:
        raise ValueError("binary_metrics needs a 2x2 confusion matrix")
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    tn, fp = int(cm.counts[0, 0]), int(cm.counts[0, 1])
    fn, tp = int(cm.counts[1, 0]), int(cm.counts[1, 1])
    accuracy = (tp + tn) / (tp + tn + fp + fn)
    sensitivity = tp / (tp + fn) if tp + fn > 0 else 0.0
    specificity = tn / (tn + fp) if tn + fp > 0 else 0.0
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    f1 = (
        2 * precision * sensitivity / (precision + sensitivity)
        if precision + sensitivity > 0
        else 0.0
    )
    return {
        "accuracy": accuracy,
        "sensitivity": sensitivity,
        "specificity": specificity,
        "precision": precision,
        "f1": f1,
    }


def auc_roc(scores, gold) -> float:
    """Mann-Whitney rank statistic:
    (#concordant pairs + 0.5 * #tied pairs) / (n_pos * n_neg)."""
    scores = [float(s) for s in scores]
    gold = [int(g) for g in gold]
    if len(scores) != len(gold):
        raise ValueError("scores and labels must have equal lengths")
    n_pos = sum(gold)
    n_neg = len(gold) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    # average ranks with tie groups; rank-sum identity gives conc + 0.5*ties
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    rank_sum = sum(r for r, g in zip(ranks, gold) if g == 1)
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass
class MetricsReport:
    """Overall metrics plus the confusion matrix; multi-class reports carry
    per-class one-vs-rest rows, with the overall row being the macro mean."""

    metrics: ClassMetrics
    cm: ConfusionMatrix
    per_class: dict[str, ClassMetrics] | None = None
    label: str = ""

    def to_json(self) -> dict:
        obj: dict = {
            "label": self.label,
            "metrics": self.metrics.to_json(),
            "confusion_matrix": self.cm.to_json(),
        }
        if self.per_class is not None:
            obj["per_class"] = {k: v.to_json() for k, v in self.per_class.items()}
        return obj


def safe_auc(scores, gold) -> float:
    """One-vs-rest AUC, falling back to chance (0.5) when a side is empty."""
    gold = [int(g) for g in gold]
    if sum(gold) in (0, len(gold)):
        return 0.5
    return auc_roc(scores, gold)


def macro_metrics(cm: ConfusionMatrix, scores: np.ndarray, gold) -> MetricsReport:
    """Per-class one-vs-rest metrics plus their unweighted macro average.

    ``scores`` is an (N, k) array of per-class scores used for the
    one-vs-rest AUCs; ``gold`` the per-case true class indices.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gold = list(gold)
    if scores.ndim != 2 or scores.shape[1] != cm.k:
        raise ValueError(f"scores must be (N, {cm.k})")
    if len(gold) != scores.shape[0]:
        raise ValueError("scores and gold must have equal lengths")
    class_names = (
        [t.value for t in AbnormalityType] if cm.k == 4
        else [str(i) for i in range(cm.k)]
    )
    per_class: dict[str, ClassMetrics] = {}
    for cls in range(cm.k):
        ovr = cm.one_vs_rest(cls)
        base = binary_metrics(ovr)
        auc = safe_auc(scores[:, cls], [1 if g == cls else 0 for g in gold])
        per_class[class_names[cls]] = ClassMetrics(auc_roc=auc, **base)
    names = ("accuracy", "auc_roc", "sensitivity", "specificity", "precision", "f1")
    macro = ClassMetrics(**{
        n: sum(getattr(m, n) for m in per_class.values()) / cm.k for n in names
    })
    return MetricsReport(metrics=macro, cm=cm, per_class=per_class, label="macro")


def stage_error_rates(gold, pred, labels: list) -> dict:
    """Per-label FP% (share of predicted-L that are not gold-L) and FN%
    (share of gold-L not predicted as L).  A label never predicted reports
    FP% = None; a label absent from gold reports FN% = None."""
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ValueError("length mismatch")
    if not gold:
        raise ValueError("empty input")
    table: dict = {}
    for label in labels:
        n_pred = sum(1 for p in pred if p == label)
        n_gold = sum(1 for g in gold if g == label)
        fp = sum(1 for g, p in zip(gold, pred) if p == label and g != label)
        fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
        key = label.value if hasattr(label, "value") else str(label)
        table[key] = {
            "fp_pct": 100.0 * fp / n_pred if n_pred > 0 else None,
            "fn_pct": 100.0 * fn / n_gold if n_gold > 0 else None,
        }
    return table


def top1_error_rate(results: list[RetrievalResult]) -> float:
    """Retrieval-stage error: percentage of queries whose top-1 reference has
    the wrong abnormality type."""
    if not results:
        raise ValueError("empty result set")
    wrong = sum(
        1
        for r in results
        if not r.top_k or r.top_k[0].abnormality != r.gold
    )
    return 100.0 * wrong / len(results)


_CSV_HEADERS = [
    "Label",
    "Accuracy (%)",
    "AUC-ROC",
    "Sensitivity (%)",
    "Specificity (%)",
    "Precision (%)",
    "F1-score (%)",
]


def _csv_row(label: str, m: ClassMetrics) -> list[str]:
    return [
        label,
        f"{100 * m.accuracy:.2f}",
        f"{m.auc_roc:.2f}",
        f"{100 * m.sensitivity:.2f}",
        f"{100 * m.specificity:.2f}",
        f"{100 * m.precision:.2f}",
        f"{100 * m.f1:.2f}",
    ]


def report_to_csv(report: MetricsReport) -> str:
    """Table-shaped CSV: percentages to 2 decimals, one row per class plus
    the overall/macro row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_HEADERS)
    if report.per_class:
        for name, m in report.per_class.items():
            writer.writerow(_csv_row(name, m))
    writer.writerow(_csv_row(report.label or "overall", report.metrics))
    return buf.getvalue()
