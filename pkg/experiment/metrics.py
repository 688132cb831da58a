"""
Classification metrics: confusion matrix, ACC/SEN/SPE, per-class accuracy, ROC and AUC
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from utils.errors import DataError, UsageError


@dataclass
class MetricsReport:
    accuracy: float
    confusion: list
    per_class_accuracy: list
    sensitivity: float = None
    specificity: float = None
    auc: float = None
    positive_class: int = None
    n_samples: int = 0
    roc: dict = field(default=None, repr=False)

    def to_dict(self):
        values = asdict(self)
        values.pop("roc")
        return values


def confusion_matrix(y_true, y_pred, num_classes):
    """Rows are true classes, columns predicted classes"""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return matrix


def _rate(numerator, denominator):
    return float(numerator / denominator) if denominator else 0.0


def metrics_from_confusion(confusion, positive_class=1, negative_class=0):
    """
    Derive rates from a confusion matrix

    Binary tasks report SEN (recall of the patient class) and SPE (recall of
    the control class); every task reports per-class recall and overall ACC.

    Args:
        confusion (np.ndarray): [C, C], rows true
        positive_class (int): Patient class index
        negative_class (int): Control class index

    Returns:
        MetricsReport: Rates without AUC
    """
    confusion = np.asarray(confusion)
    total = int(confusion.sum())
    if total == 0:
        raise UsageError("cannot compute metrics for an empty scan set")

    per_class = [_rate(confusion[c, c], confusion[c].sum()) for c in range(confusion.shape[0])]
    report = MetricsReport(
        accuracy=_rate(np.trace(confusion), total),
        confusion=confusion.tolist(),
        per_class_accuracy=per_class,
        n_samples=total,
    )
    if confusion.shape[0] == 2:
        report.positive_class = positive_class
        report.sensitivity = per_class[positive_class]
        report.specificity = per_class[negative_class]
    return report


def roc_auc(scores, labels):
    """
    Probability that a random positive outranks a random negative, ties counted half

    Args:
        scores (array-like): Positive-class scores
        labels (array-like): 1 for positive, 0 for negative

    Returns:
        float: AUC in [0, 1]
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined when only one class is present")

    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """
    ROC points at every distinct threshold, highest first

    Returns:
        tuple: (fpr, tpr, thresholds) arrays starting at (0, 0) with threshold +inf
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC is undefined when only one class is present")

    thresholds = np.unique(scores)[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for threshold in thresholds:
        predicted = scores >= threshold
        tpr.append(float((predicted & labels).sum() / n_pos))
        fpr.append(float((predicted & ~labels).sum() / n_neg))
    return np.array(fpr), np.array(tpr), np.concatenate([[np.inf], thresholds])


def roc_frame(scores, labels):
    fpr, tpr, thresholds = roc_curve(scores, labels)
    return pd.DataFrame({"threshold": thresholds, "fpr": fpr, "tpr": tpr})


def evaluate_metrics(model, scans, positive_class=1, negative_class=0):
    """
    Score labeled scans with an eval-mode forward pass

    Args:
        model (DcaCrnModel): Trained network
        scans (list[DfcnTensor]): Labeled scans
        positive_class (int): Patient class for SEN and AUC
        negative_class (int): Control class for SPE

    Returns:
        MetricsReport: Rates, confusion matrix and (binary) AUC with ROC points
    """
    if not scans:
        raise UsageError("cannot evaluate an empty scan set")

    labels = np.array([s.label for s in scans], dtype=np.int64)
    probs = model.predict_proba(np.stack([s.values for s in scans]))
    predicted = probs.argmax(axis=1)

    report = metrics_from_confusion(
        confusion_matrix(labels, predicted, model.config.num_classes), positive_class, negative_class,
    )
    if model.config.num_classes == 2:
        positives = labels == positive_class
        if positives.any() and (~positives).any():
            report.auc = roc_auc(probs[:, positive_class], positives)
            report.roc = roc_frame(probs[:, positive_class], positives).to_dict(orient="list")
    return report
