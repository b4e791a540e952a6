"""
Reconstruction-error detection and the evaluation metric suite.

A device's threshold is the mean plus the population standard deviation of
the benign threshold partition's reconstruction MSE; a sample is flagged
anomalous (label 1) when its MSE is strictly greater than the threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from scipy.stats import rankdata

from fediot.autoencoder import ModelParams, reconstruction_errors
from fediot.data_pipeline import BENIGN, DeviceDataset
from fediot.errors import ConfigurationError, MetricsError
from fediot.numeric import Matrix, Vector

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1", "tpr", "fpr", "specificity", "npv", "auc")

Labels = npt.NDArray[np.int8]


@dataclass(frozen=True)
class Threshold:
    """Per-device decision threshold tr = mean + std of benign reconstruction MSE."""
    device_id: str
    tr: float
    mse_mean: float
    mse_std: float


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; the positive class is anomalous (1)."""
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class DetectionMetrics:
    """
    Rates derived from ConfusionCounts.

    Any rate whose denominator is zero is reported as 0 and its name is
    listed in ``degenerate``.
    """
    accuracy: float
    precision: float
    recall: float
    f1: float
    tpr: float
    fpr: float
    specificity: float
    npv: float
    degenerate: Tuple[str, ...] = ()


@dataclass
class DeviceReport:
    """Threshold, confusion counts and metrics of one device."""
    device_id: str
    threshold: Threshold
    counts: ConfusionCounts
    metrics: DetectionMetrics
    auc: Optional[float]
    family_rates: Dict[str, Tuple[int, float]] = field(default_factory=dict)

    def row(self) -> Dict[str, Optional[float]]:
        values = {name: getattr(self.metrics, name) for name in METRIC_COLUMNS if name != "auc"}
        values["auc"] = self.auc
        return values


@dataclass
class MetricsReport:
    """Per-device reports of one run."""
    devices: List[DeviceReport]
    wall_time_sec: float = 0.0

    def averages(self) -> Dict[str, Optional[float]]:
        """Unweighted means over devices (AUC over the devices where it is defined)."""
        out: Dict[str, Optional[float]] = {}
        for name in METRIC_COLUMNS:
            values = [d.row()[name] for d in self.devices if d.row()[name] is not None]
            out[name] = float(np.mean(values)) if values else None
        return out


def threshold_from_scores(scores: Vector, device_id: str = "") -> Threshold:
    """tr = mean + population std of benign reconstruction errors."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ConfigurationError(f"{device_id or 'device'}: empty threshold partition")
    mean = float(scores.mean())
    std = float(scores.std(ddof=0))
    return Threshold(device_id=device_id, tr=mean + std, mse_mean=mean, mse_std=std)


def compute_threshold(params: ModelParams, threshold_benign: Matrix, device_id: str = "",
                      activation: str = "relu") -> Threshold:
    """
    Threshold of one device from its benign threshold partition.

    Raises:
        ConfigurationError: If the partition is empty
    """
    if threshold_benign.shape[0] == 0:
        raise ConfigurationError(f"{device_id or 'device'}: empty threshold partition")
    return threshold_from_scores(reconstruction_errors(params, threshold_benign, activation), device_id)


def classify_scores(scores: Vector, tr: float) -> Labels:
    return (np.asarray(scores, dtype=np.float64) > tr).astype(np.int8)


def classify(params: ModelParams, tr: float, samples: Matrix, activation: str = "relu") -> Labels:
    """Label 1 where the reconstruction MSE strictly exceeds ``tr``."""
    return classify_scores(reconstruction_errors(params, samples, activation), tr)


def confusion(pred: npt.ArrayLike, actual: npt.ArrayLike) -> ConfusionCounts:
    """
    Tally predicted against actual labels.

    Raises:
        MetricsError: If the vectors differ in length or hold labels other than 0/1
    """
    pred = np.asarray(pred).astype(np.int64).ravel()
    actual = np.asarray(actual).astype(np.int64).ravel()
    if pred.shape != actual.shape:
        raise MetricsError(f"Length mismatch: {pred.size} predictions, {actual.size} labels")
    if np.any((pred != 0) & (pred != 1)) or np.any((actual != 0) & (actual != 1)):
        raise MetricsError("Labels must be 0 or 1")
    return ConfusionCounts(
        tp=int(np.sum((pred == 1) & (actual == 1))),
        fp=int(np.sum((pred == 1) & (actual == 0))),
        tn=int(np.sum((pred == 0) & (actual == 0))),
        fn=int(np.sum((pred == 0) & (actual == 1))),
    )


def metrics(counts: ConfusionCounts) -> DetectionMetrics:
    """
    Accuracy, precision, recall/TPR, F1, FPR, specificity and NPV.

    Raises:
        MetricsError: If no samples were counted
    """
    n = counts.total
    if n == 0:
        raise MetricsError("Cannot compute metrics on zero samples")
    degenerate: List[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    recall = ratio(counts.tp, counts.tp + counts.fn, "recall")
    fpr = ratio(counts.fp, counts.fp + counts.tn, "fpr")
    specificity = ratio(counts.tn, counts.tn + counts.fp, "specificity")
    npv = ratio(counts.tn, counts.tn + counts.fn, "npv")
    if precision + recall == 0.0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    if degenerate:
        logger.warning(f"Degenerate metric denominators: {', '.join(degenerate)}")
    return DetectionMetrics(
        accuracy=(counts.tp + counts.tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        tpr=recall,
        fpr=fpr,
        specificity=specificity,
        npv=npv,
        degenerate=tuple(degenerate),
    )


def auc(scores: npt.ArrayLike, labels: npt.ArrayLike) -> Optional[float]:
    """
    Rank-statistic ROC AUC with half credit for ties.

    Returns:
        P(score_pos > score_neg) + P(equal) / 2, or None for single-class input
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(np.int64).ravel()
    if scores.shape != labels.shape:
        raise MetricsError(f"Length mismatch: {scores.size} scores, {labels.size} labels")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def family_detection_rates(pred: Labels, test_types: Sequence[str]) -> Dict[str, Tuple[int, float]]:
    """Fraction of each anomalous family's test rows that were flagged."""
    rates: Dict[str, Tuple[int, float]] = {}
    types = np.asarray(test_types)
    for family in sorted(set(test_types) - {BENIGN}):
        mask = types == family
        rates[family] = (int(mask.sum()), float(np.mean(pred[mask])))
    return rates


def evaluate_device(params: ModelParams, dataset: DeviceDataset, activation: str = "relu") -> DeviceReport:
    """Threshold, classify, count and score one device's mixed test set."""
    threshold = compute_threshold(params, dataset.threshold_benign, dataset.device_id, activation)
    scores = reconstruction_errors(params, dataset.test_features, activation)
    pred = classify_scores(scores, threshold.tr)
    counts = confusion(pred, dataset.test_labels)
    report = DeviceReport(
        device_id=dataset.device_id,
        threshold=threshold,
        counts=counts,
        metrics=metrics(counts),
        auc=auc(scores, dataset.test_labels),
        family_rates=family_detection_rates(pred, dataset.test_types) if dataset.test_types else {},
    )
    logger.info(
        f"{dataset.device_id}: tr={threshold.tr:.5f} f1={report.metrics.f1:.4f} "
        f"fpr={report.metrics.fpr:.4f} auc={report.auc}"
    )
    return report


def evaluate_devices(models: Sequence[ModelParams], datasets: Sequence[DeviceDataset],
                     activation: str = "relu", wall_time_sec: float = 0.0) -> MetricsReport:
    """
    Evaluate each dataset with its model (pass the global model once per device).

    Raises:
        ConfigurationError: If the model and dataset counts differ
    """
    if len(models) != len(datasets):
        raise ConfigurationError(f"{len(models)} models for {len(datasets)} devices")
    reports = [evaluate_device(m, ds, activation) for m, ds in zip(models, datasets)]
    return MetricsReport(reports, wall_time_sec)
