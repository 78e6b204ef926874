"""Confusion matrices and per-class precision / recall / F reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES, N_CLASSES


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def f_measure(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


@dataclass(frozen=True)
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    avg_precision: float
    avg_recall: float
    avg_f1: float
    # e.g. "precision undefined for HOF"; undefined ratios are reported as 0
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        per_class = {
            name: {"precision": float(self.precision[i]), "recall": float(self.recall[i]),
                   "f1": float(self.f1[i]), "support": int(self.support[i])}
            for i, name in enumerate(CLASS_NAMES)
        }
        return {
            "per_class": per_class,
            "weighted_average": {"precision": self.avg_precision, "recall": self.avg_recall, "f1": self.avg_f1},
            "accuracy": self.accuracy,
            "warnings": list(self.warnings),
        }

    def table(self) -> str:
        lines = [f"{'Cell Type':<10}{'Precision':>10}{'Recall':>10}{'F':>10}{'Support':>10}"]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(f"{name:<10}{self.precision[i]:>10.3f}{self.recall[i]:>10.3f}"
                         f"{self.f1[i]:>10.3f}{int(self.support[i]):>10d}")
        lines.append(f"{'Average':<10}{self.avg_precision:>10.3f}{self.avg_recall:>10.3f}"
                     f"{self.avg_f1:>10.3f}{int(self.support.sum()):>10d}")
        lines.append(f"accuracy {self.accuracy:.3f}")
        return "\n".join(lines)


def classification_report(cm) -> ClassReport:
    cm = np.asarray(cm)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    warnings = []
    precision = np.zeros(len(tp))
    recall = np.zeros(len(tp))
    for i, name in enumerate(CLASS_NAMES[: len(tp)]):
        if pred[i] > 0:
            precision[i] = tp[i] / pred[i]
        else:
            warnings.append(f"precision undefined for {name}")
        if support[i] > 0:
            recall[i] = tp[i] / support[i]
        else:
            warnings.append(f"recall undefined for {name}")
    f1 = np.array([f_measure(p, r) for p, r in zip(precision, recall)])
    w = support / total
    return ClassReport(precision, recall, f1, support, float(tp.sum() / total),
                       float(w @ precision), float(w @ recall), float(w @ f1), warnings)


def confusion_from_rates(precision, recall, support) -> np.ndarray:
    """An integer confusion matrix reproducing per-class precision and recall.

    True positives are ``round(recall * support)`` and predicted totals
    ``round(tp / precision)``; the off-diagonal mass is then laid out as a
    transport problem with a zero diagonal.
    """
    from scipy.optimize import linprog

    precision, recall = np.asarray(precision, float), np.asarray(recall, float)
    support = np.broadcast_to(np.asarray(support, dtype=np.int64), precision.shape)
    k = len(precision)
    tp = np.rint(recall * support).astype(np.int64)
    pred = np.where(precision > 0, np.rint(tp / np.where(precision > 0, precision, 1)), tp).astype(np.int64)
    row_rest, col_rest = support - tp, pred - tp
    if row_rest.sum() != col_rest.sum() or np.any(row_rest < 0) or np.any(col_rest < 0):
        raise ValueError("precision, recall and support are not consistent with any confusion matrix")
    off = [(i, j) for i in range(k) for j in range(k) if i != j]
    a_eq = np.zeros((2 * k, len(off)))
    for v, (i, j) in enumerate(off):
        a_eq[i, v] = 1
        a_eq[k + j, v] = 1
    res = linprog(np.zeros(len(off)), A_eq=a_eq, b_eq=np.concatenate([row_rest, col_rest]),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise ValueError("no confusion matrix matches these rates")
    cm = np.diag(tp)
    for v, (i, j) in enumerate(off):
        cm[i, j] = int(round(res.x[v]))
    return cm
