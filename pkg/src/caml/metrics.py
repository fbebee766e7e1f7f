"""Decision and segmentation metrics."""

import numpy as np

from .tensor import DimensionError
from .world import BRAKE


class UndefinedMetricError(ValueError):
    pass


def _actions(episodes):
    if hasattr(episodes, "actions"):
        return np.asarray(episodes.actions)
    return np.array([e.expert_action if hasattr(e, "expert_action") else e for e in episodes])


def _aligned(predictions, episodes):
    pred = np.asarray(predictions)
    truth = _actions(episodes)
    if pred.shape != truth.shape:
        raise DimensionError(f"predictions {pred.shape} and labels {truth.shape} are not aligned")
    return pred, truth


def adr(predictions, episodes):
    """Share of expert-BRAKE episodes where the prediction is BRAKE."""
    pred, truth = _aligned(predictions, episodes)
    positives = truth == BRAKE
    if not positives.any():
        raise UndefinedMetricError("ADR is undefined without ground-truth BRAKE episodes")
    return float(np.sum(positives & (pred == BRAKE)) / np.sum(positives))


def eir(predictions, episodes):
    """Exact-match rate against the expert, computed as one minus the Hamming error rate."""
    pred, truth = _aligned(predictions, episodes)
    if truth.size == 0:
        raise UndefinedMetricError("EIR is undefined on an empty set")
    return float(1.0 - np.mean(pred != truth))


def false_alarm_rate(predictions, episodes):
    pred, truth = _aligned(predictions, episodes)
    negatives = truth != BRAKE
    if not negatives.any():
        return 0.0
    return float(np.sum(negatives & (pred == BRAKE)) / np.sum(negatives))


def miou(pred_maps, label_maps, num_classes):
    """Mean IoU over classes present in prediction or ground truth."""
    pred = np.asarray(pred_maps)
    gt = np.asarray(label_maps)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and label {gt.shape} shapes differ")
    ious = []
    for c in range(num_classes):
        p, g = pred == c, gt == c
        union = np.sum(p | g)
        if union == 0:
            continue
        ious.append(np.sum(p & g) / union)
    if not ious:
        raise UndefinedMetricError("mIoU is undefined on empty maps")
    return float(np.mean(ious))


def decision_metrics(predictions, actions):
    return {
        "adr": adr(predictions, actions),
        "eir": eir(predictions, actions),
        "false_alarm": false_alarm_rate(predictions, actions),
    }
