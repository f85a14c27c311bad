"""Confusion-matrix metrics and one-vs-rest ROC-AUC.

Any ratio whose denominator is zero is *undefined* and reported as ``None``.
Undefined values are skipped by macro averages instead of counting as zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LabelError, UndefinedMetricError
from .model import CLASS_NAMES

DECIMALS = 6


@dataclass
class ClassMetrics:
    name: str
    support: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    specificity: float | None
    f1: float | None
    auc: float | None = None

    @property
    def sensitivity(self) -> float | None:
        return self.recall


@dataclass
class MetricsReport:
    confusion: np.ndarray
    per_class: list[ClassMetrics]
    accuracy: float | None
    balanced_accuracy: float | None
    macro_precision: float | None
    macro_recall: float | None
    macro_specificity: float | None
    macro_f1: float | None
    macro_auc: float | None
    class_names: tuple[str, ...] = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "total": self.total,
            "confusion": self.confusion.tolist(),
            "accuracy": _round(self.accuracy),
            "balanced_accuracy": _round(self.balanced_accuracy),
            "macro_precision": _round(self.macro_precision),
            "macro_recall": _round(self.macro_recall),
            "macro_specificity": _round(self.macro_specificity),
            "macro_f1": _round(self.macro_f1),
            "macro_auc": _round(self.macro_auc),
            "per_class": [
                {
                    "name": c.name,
                    "support": c.support,
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn,
                    "tn": c.tn,
                    "precision": _round(c.precision),
                    "recall": _round(c.recall),
                    "specificity": _round(c.specificity),
                    "f1": _round(c.f1),
                    "auc": _round(c.auc),
                }
                for c in self.per_class
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_class = [ClassMetrics(**c) for c in d["per_class"]]
        return cls(
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            per_class=per_class,
            accuracy=d["accuracy"],
            balanced_accuracy=d["balanced_accuracy"],
            macro_precision=d["macro_precision"],
            macro_recall=d["macro_recall"],
            macro_specificity=d["macro_specificity"],
            macro_f1=d["macro_f1"],
            macro_auc=d["macro_auc"],
            class_names=tuple(d["class_names"]),
        )


def _round(x: float | None) -> float | None:
    return None if x is None else round(float(x), DECIMALS)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def _mean_defined(values) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def confusion(true_labels: Sequence[int], predicted: Sequence[int], num_classes: int = 10) -> np.ndarray:
    """Counts with rows = true class and columns = predicted class."""
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise LabelError(f"label sequences differ in length: {t.size} vs {p.size}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelError(f"{name} labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def class_metrics(cm: np.ndarray, class_names: Sequence[str] | None = None) -> list[ClassMetrics]:
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    names = list(class_names) if class_names is not None else _default_names(k)
    total = int(cm.sum())
    out = []
    for c in range(k):
        tp = int(cm[c, c])
        fp = int(cm[:, c].sum()) - tp
        fn = int(cm[c, :].sum()) - tp
        tn = total - tp - fp - fn
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        if precision is None or recall is None:
            f1 = None
        else:
            # 2PR/(P+R) written over counts so it stays exact; 0 when P = R = 0.
            f1 = _ratio(2 * tp, 2 * tp + fp + fn)
        out.append(ClassMetrics(names[c], tp + fn, tp, fp, fn, tn, precision, recall, _ratio(tn, tn + fp), f1))
    return out


def _default_names(k: int) -> list[str]:
    return list(CLASS_NAMES) if k == len(CLASS_NAMES) else [str(i) for i in range(k)]


def accuracy(cm: np.ndarray) -> float | None:
    cm = np.asarray(cm, dtype=np.int64)
    return _ratio(int(np.trace(cm)), int(cm.sum()))


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean recall over classes that have at least one true sample."""
    recalls = [m.recall for m in class_metrics(cm) if m.support > 0]
    if not recalls:
        raise UndefinedMetricError("balanced accuracy is undefined: no class has support")
    return sum(recalls) / len(recalls)


def binary_auc(positive: np.ndarray, scores: np.ndarray) -> float | None:
    """Mann-Whitney AUC from average ranks; ties between classes count one half."""
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # Average 1-based rank for each run of equal scores.
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    avg_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(avg_rank, ends - starts)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_ovr(true_labels: Sequence[int], probabilities: np.ndarray) -> tuple[list[float | None], float | None]:
    """Per-class one-vs-rest AUC and their macro mean over defined classes."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64)
    if probabilities.ndim != 2 or probabilities.shape[0] != labels.size:
        raise LabelError(f"need one probability row per label, got {probabilities.shape} for {labels.size} labels")
    per_class = [binary_auc(labels == c, probabilities[:, c]) for c in range(probabilities.shape[1])]
    return per_class, _mean_defined(per_class)


def build_report(
    true_labels: Sequence[int],
    predicted: Sequence[int],
    probabilities: np.ndarray | None = None,
    class_names: Sequence[str] = CLASS_NAMES,
) -> MetricsReport:
    k = len(class_names)
    cm = confusion(true_labels, predicted, k)
    per_class = class_metrics(cm, class_names)
    macro_auc = None
    if probabilities is not None and len(true_labels):
        aucs, macro_auc = roc_auc_ovr(true_labels, probabilities)
        for m, a in zip(per_class, aucs):
            m.auc = a
    supported = [m.recall for m in per_class if m.support > 0]
    return MetricsReport(
        confusion=cm,
        per_class=per_class,
        accuracy=accuracy(cm),
        balanced_accuracy=sum(supported) / len(supported) if supported else None,
        macro_precision=_mean_defined(m.precision for m in per_class),
        macro_recall=_mean_defined(m.recall for m in per_class),
        macro_specificity=_mean_defined(m.specificity for m in per_class),
        macro_f1=_mean_defined(m.f1 for m in per_class),
        macro_auc=macro_auc,
        class_names=tuple(class_names),
    )


def micro_precision_recall(cm: np.ndarray) -> tuple[Fraction, Fraction]:
    """Exact micro-averaged precision and recall (both equal accuracy for single-label data)."""
    cm = np.asarray(cm, dtype=np.int64)
    tp = int(np.trace(cm))
    fp = sum(int(cm[:, c].sum()) - int(cm[c, c]) for c in range(cm.shape[0]))
    fn = sum(int(cm[c, :].sum()) - int(cm[c, c]) for c in range(cm.shape[0]))
    return Fraction(tp, tp + fp), Fraction(tp, tp + fn)


CSV_COLUMNS = ("class", "support", "precision", "recall", "specificity", "f1", "auc")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.{DECIMALS}f}"


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def report_csv_rows(report: MetricsReport) -> list[list[str]]:
    rows = [list(CSV_COLUMNS)]
    for c in report.per_class:
        rows.append([c.name] + [_cell(v) for v in (c.support, c.precision, c.recall, c.specificity, c.f1, c.auc)])
    rows.append(
        ["macro"]
        + [
            _cell(v)
            for v in (
                report.total,
                report.macro_precision,
                report.macro_recall,
                report.macro_specificity,
                report.macro_f1,
                report.macro_auc,
            )
        ]
    )
    return rows


def emit_report(report: MetricsReport, path, fmt: str = "json") -> Path:
    """Write ``report`` as JSON (full nested) or CSV (one row per class plus a macro row)."""
    path = Path(path)
    if fmt == "json":
        path.write_text(report_json(report), encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(report_csv_rows(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
