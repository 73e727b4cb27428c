"""
Accuracy and AUC for the classifier's expectation values.

Binary tasks score one <Z> per sample against targets +1 (class 0) and -1
(class 1); a prediction is correct when it deviates from the target by less
than 1. Multi-class tasks turn the measured expectations into class scores
and compare the argmax. AUC is the Mann-Whitney rank statistic, ties counted
as one half; multi-class AUC is one-vs-rest over softmax probabilities.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional

import numpy as np
from scipy.special import softmax
from scipy.stats import rankdata

from errors import UndefinedMetricError, ValidationError

if TYPE_CHECKING:
    from trainer import MeasurementPlan

logger = logging.getLogger(__name__)

AUC_AVERAGES = ("macro", "weighted")


def _as_rows(expectations) -> np.ndarray:
    values = np.asarray(expectations, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def _check_lengths(expectations: np.ndarray, labels: np.ndarray) -> None:
    if len(expectations) != len(labels):
        raise ValidationError(f"{len(expectations)} predictions for {len(labels)} labels")


def correct_mask(expectations, labels, plan: "MeasurementPlan") -> np.ndarray:
    """Per-sample correctness under the binary threshold rule or argmax matching"""
    rows = _as_rows(expectations)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_lengths(rows, labels)
    if plan.n_classes == 2:
        targets = 1.0 - 2.0 * labels
        return np.abs(rows[:, 0] - targets) < 1.0
    return plan.predict_classes(rows) == labels


def accuracy(predictions, labels, plan: "MeasurementPlan") -> float:
    """Fraction of predictions counted correct under the plan's rule"""
    mask = correct_mask(predictions, labels, plan)
    if len(mask) == 0:
        raise ValidationError("Accuracy of an empty prediction set")
    return float(mask.mean())


def auc_binary(scores, labels) -> float:
    """Positives are labels > 0; counts positive-over-negative pairs plus half the ties"""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    _check_lengths(scores, labels)
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def auc_multiclass(expectations, labels, n_classes: int, average: str = "macro") -> float:
    """Softmax over each row, then one-vs-rest AUC per class, macro or prevalence-weighted"""
    if average not in AUC_AVERAGES:
        raise ValidationError(f"average must be one of {AUC_AVERAGES}, got {average!r}")
    rows = _as_rows(expectations)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_lengths(rows, labels)
    if rows.shape[1] != n_classes:
        raise ValidationError(f"Expected {n_classes} score columns, got {rows.shape[1]}")
    probabilities = softmax(rows, axis=1)
    per_class = []
    weights = []
    for c in range(n_classes):
        members = labels == c
        if not members.any():
            raise UndefinedMetricError(f"AUC undefined: class {c} has no samples")
        per_class.append(auc_binary(probabilities[:, c], np.where(members, 1, -1)))
        weights.append(members.sum())
    if average == "weighted":
        return float(np.average(per_class, weights=weights))
    return float(np.mean(per_class))


def auc(expectations, labels, plan: "MeasurementPlan", average: str = "macro") -> float:
    """AUC of a plan's outputs: <Z> itself for binary tasks, class scores otherwise"""
    rows = _as_rows(expectations)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if plan.n_classes == 2:
        return auc_binary(rows[:, 0], 1 - 2 * labels)
    return auc_multiclass(plan.class_scores(rows), labels, plan.n_classes, average)


@dataclass
class EvaluationReport:
    acc: float
    auc: Optional[float]
    n_samples: int
    per_class_total: List[int]
    per_class_correct: List[int]
    fingerprint: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "acc": self.acc,
            "auc": self.auc,
            "n_samples": self.n_samples,
            "per_class_total": list(self.per_class_total),
            "per_class_correct": list(self.per_class_correct),
            "fingerprint": {k: self.fingerprint[k] for k in sorted(self.fingerprint)},
        }

    def to_text(self) -> str:
        """Pretty-printed JSON form"""
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Dict) -> "EvaluationReport":
        """Rebuild a report from its JSON form"""
        return cls(acc=float(data["acc"]), auc=None if data.get("auc") is None else float(data["auc"]),
                   n_samples=int(data["n_samples"]), per_class_total=list(data["per_class_total"]),
                   per_class_correct=list(data["per_class_correct"]), fingerprint=dict(data.get("fingerprint", {})))


def evaluate(expectations, labels, plan: "MeasurementPlan", fingerprint: Optional[Dict[str, object]] = None,
             average: str = "macro") -> EvaluationReport:
    """ACC, AUC and per-class tallies; AUC is None when a class is absent"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = correct_mask(expectations, labels, plan)
    try:
        auc_value = auc(expectations, labels, plan, average)
    except UndefinedMetricError as e:
        logger.warning(f"{e}; reporting AUC as undefined")
        auc_value = None
    totals = np.bincount(labels, minlength=plan.n_classes)
    correct = np.bincount(labels[mask], minlength=plan.n_classes)
    return EvaluationReport(
        acc=float(mask.mean()) if len(mask) else 0.0,
        auc=auc_value,
        n_samples=int(len(labels)),
        per_class_total=totals.tolist(),
        per_class_correct=correct.tolist(),
        fingerprint=dict(fingerprint or {}),
    )
