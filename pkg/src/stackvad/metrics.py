"""Frame-level accuracy, confusion counts, ROC/AUC and operating points."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, LengthMismatch, SingleClass


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} predictions/scores vs {b.size} labels")
    if a.size == 0:
        raise EmptyDataset("nothing to evaluate")
    return a, b


def accuracy(preds, labels) -> float:
    preds, labels = _pair(preds, labels)
    return int(np.sum(preds == labels)) / labels.size


def confusion(preds, labels) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) with speech (+1) as the positive class."""
    preds, labels = _pair(preds, labels)
    pos_p, pos_l = preds > 0, labels > 0
    return (int(np.sum(pos_p & pos_l)), int(np.sum(pos_p & ~pos_l)),
            int(np.sum(~pos_p & ~pos_l)), int(np.sum(~pos_p & pos_l)))


def _check_both(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(np.sum(labels > 0))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC analysis needs both classes")
    return n_pos, n_neg


def roc_curve(scores, labels) -> np.ndarray:
    """ROC points (fpr, tpr) from (0, 0) to (1, 1).

    One point per distinct score, so tied scores move together and give a
    diagonal segment.
    """
    scores, labels = _pair(np.asarray(scores, dtype=np.float64), labels)
    n_pos, n_neg = _check_both(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], labels[order] > 0
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    return np.column_stack([fpr, tpr])


def auc_trapezoid(roc: np.ndarray) -> float:
    x, y = roc[:, 0], roc[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(scores, labels) -> tuple[np.ndarray, float]:
    roc = roc_curve(scores, labels)
    return roc, auc_trapezoid(roc)


def operating_point(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(fpr, tpr) when frames scoring at or above ``threshold`` are called speech."""
    scores, labels = _pair(np.asarray(scores, dtype=np.float64), labels)
    n_pos, n_neg = _check_both(labels)
    called = scores >= threshold
    pos = labels > 0
    return float(np.sum(called & ~pos) / n_neg), float(np.sum(called & pos) / n_pos)


@dataclass
class EvalReport:
    accuracy: float
    confusion: dict
    tpr: float
    fpr: float
    auc: float
    roc: list = field(default_factory=list)
    n: int = 0
    threshold: float = 0.5
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Full report for probability-like ``scores`` against +/-1 ``labels``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    preds = np.where(scores >= threshold, 1, -1)
    tp, fp, tn, fn = confusion(preds, labels)
    roc, auc = roc_auc(scores, labels)
    fpr, tpr = operating_point(scores, labels, threshold)
    return EvalReport(
        accuracy=accuracy(preds, labels),
        confusion={"TP": tp, "FP": fp, "TN": tn, "FN": fn},
        tpr=tpr, fpr=fpr, auc=auc,
        roc=roc.tolist(), n=int(labels.size), threshold=threshold,
    )


REPORT_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "confusion", "tpr", "fpr", "auc", "roc", "n"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "confusion": {
            "type": "object",
            "required": ["TP", "FP", "TN", "FN"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("TP", "FP", "TN", "FN")},
        },
        "tpr": {"type": "number", "minimum": 0, "maximum": 1},
        "fpr": {"type": "number", "minimum": 0, "maximum": 1},
        "auc": {"type": "number", "minimum": 0, "maximum": 1},
        "roc": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                           "items": {"type": "number"}}},
        "n": {"type": "integer", "minimum": 1},
        "threshold": {"type": "number"},
    },
}


def write_report(path, report: EvalReport | dict) -> None:
    d = report.to_dict() if isinstance(report, EvalReport) else report
    Path(path).write_text(json.dumps(d, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def write_roc_csv(path, roc) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in roc:
            w.writerow([repr(float(fpr)), repr(float(tpr))])
