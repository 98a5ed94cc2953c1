"""COCO-style mask evaluation for single-class canopy segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError

# 0.50, 0.55, ..., 0.95
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = tuple(i / 100 for i in range(101))


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


# Predictions for one image: sequence of (mask, score). Truths: sequence of masks.
ImagePredictions = Sequence[Tuple[np.ndarray, float]]
ImageTruths = Sequence[np.ndarray]


def _match_image(preds: ImagePredictions, truths: ImageTruths, threshold: float):
    """Greedy COCO matching within one image.

    Returns ``(score, is_tp)`` per prediction. Each prediction, in descending
    score order, takes the still-unmatched truth with the highest IoU at or above
    the threshold; equal IoUs go to the lower truth index.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    ious = [[mask_iou(preds[i][0], t) for t in truths] for i in range(len(preds))]
    taken = [False] * len(truths)
    out = []
    for i in order:
        best, best_iou = -1, threshold
        for j, iou in enumerate(ious[i]):
            if taken[j] or iou < best_iou:
                continue
            if best >= 0 and iou == best_iou:
                continue
            best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
        out.append((float(preds[i][1]), best >= 0))
    return out


def average_precision(predictions: Sequence[ImagePredictions], truths: Sequence[ImageTruths],
                      iou_threshold: float) -> Optional[float]:
    """101-point interpolated AP over a dataset at one IoU threshold.

    ``predictions[k]`` and ``truths[k]`` belong to image ``k``. Returns ``None``
    when the dataset has neither truths nor predictions, and 0.0 when it has
    predictions but no truths.
    """
    if len(predictions) != len(truths):
        raise ValidationError(
            f"{len(predictions)} prediction images but {len(truths)} truth images"
        )
    n_truth = sum(len(t) for t in truths)
    detections = []
    for preds, gts in zip(predictions, truths):
        detections.extend(_match_image(preds, gts, iou_threshold))
    if n_truth == 0:
        return None if not detections else 0.0
    if not detections:
        return 0.0

    # Stable sort keeps per-image order among equal scores.
    detections.sort(key=lambda d: -d[0])
    hits = np.array([tp for _, tp in detections], dtype=np.int64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1 - hits)
    recall = tp / n_truth
    precision = tp / (tp + fp)
    # precision envelope: best precision at this or any higher recall
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = [float(envelope[i]) if i < len(envelope) else 0.0 for i in idx]
    return math.fsum(sampled) / len(RECALL_POINTS)


@dataclass(frozen=True)
class ApReport:
    ap_at: Dict[float, float]
    map_coco: float

    @property
    def ap50(self) -> float:
        return self.ap_at[0.5]

    @property
    def ap75(self) -> float:
        return self.ap_at[0.75]

    def to_dict(self) -> dict:
        return {
            "AP@[0.50:0.95:0.05]": self.map_coco,
            "AP@0.50": self.ap50,
            "AP@0.75": self.ap75,
            "ap_at": {f"{t:.2f}": v for t, v in sorted(self.ap_at.items())},
        }


def coco_map(predictions: Sequence[ImagePredictions],
             truths: Sequence[ImageTruths]) -> Optional[ApReport]:
    """AP at IoU 0.50:0.95:0.05 and their mean; ``None`` for an empty dataset."""
    ap_at = {}
    for t in COCO_THRESHOLDS:
        ap = average_precision(predictions, truths, t)
        if ap is None:
            return None
        ap_at[t] = ap
    return ApReport(ap_at=ap_at, map_coco=math.fsum(ap_at.values()) / len(ap_at))


def kfold_split(items: Sequence, k: int, seed: int) -> List[Tuple[list, list]]:
    """Shuffle ``items`` with ``seed`` and cut ``k`` (train, test) partitions.

    Test folds differ in size by at most one, larger folds first.
    """
    items = list(items)
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > len(items):
        raise ValidationError(f"k={k} exceeds the {len(items)} available items")
    order = np.random.default_rng(seed).permutation(len(items))
    folds = np.array_split(order, k)
    out = []
    for i, fold in enumerate(folds):
        test = [items[j] for j in fold]
        train = [items[j] for f, other in enumerate(folds) if f != i for j in other]
        out.append((train, test))
    return out
