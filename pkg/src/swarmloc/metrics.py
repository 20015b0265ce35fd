"""Detection, identification and orientation metrics.

Average precision follows the Pascal VOC 2010 protocol: detections sorted by
confidence are greedily matched at IoU >= 0.5 and AP is the area under the
monotone precision envelope over all recall points.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError, UndefinedAPError
from .imaging import BBox


def _box(b):
    return b if isinstance(b, BBox) else BBox.from_list(list(b))


def iou(a, b):
    """Intersection over union of two half-open boxes."""
    a, b = _box(a), _box(b)
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return float(inter / (a.area + b.area - inter))


@dataclass
class MatchResult:
    """Per-detection TP/FP labels for one class, in input order."""

    tp: list[bool] = field(default_factory=list)
    matched: list[int | None] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)
    n_gt: int = 0

    @property
    def n_tp(self):
        return sum(self.tp)

    def extend(self, other):
        self.tp.extend(other.tp)
        self.matched.extend(other.matched)
        self.confidences.extend(other.confidences)
        self.n_gt += other.n_gt
        return self


def _confidence(det):
    return float(det.confidence if hasattr(det, "confidence") else det[1])


def _det_box(det):
    return det.bbox if hasattr(det, "bbox") else det[0]


def match_detections(dets, gts, iou_threshold=0.5):
    """Label each detection of a single class and image as TP or FP.

    ``dets`` are Detections (or ``(bbox, confidence)`` pairs), ``gts`` boxes.
    Each detection, in descending confidence (input order breaks ties), takes the
    ground truth it overlaps most; if that one is already claimed it is a
    false positive.
    """
    gts = [_box(g.bbox if hasattr(g, "bbox") else g) for g in gts]
    conf = [_confidence(d) for d in dets]
    order = sorted(range(len(dets)), key=lambda i: -conf[i])
    tp = [False] * len(dets)
    matched = [None] * len(dets)
    claimed = [False] * len(gts)
    for i in order:
        best, best_iou = None, -1.0
        box = _det_box(dets[i])
        for j, g in enumerate(gts):
            o = iou(box, g)
            if o > best_iou:
                best, best_iou = j, o
        if best is not None and best_iou >= iou_threshold and not claimed[best]:
            claimed[best] = True
            tp[i] = True
            matched[i] = best
    return MatchResult(tp=tp, matched=matched, confidences=conf, n_gt=len(gts))


def precision_recall(match):
    order = sorted(range(len(match.tp)), key=lambda i: -match.confidences[i])
    flags = np.array([match.tp[i] for i in order], dtype=float)
    tps = np.cumsum(flags)
    fps = np.cumsum(1.0 - flags)
    recall = tps / match.n_gt
    precision = tps / np.maximum(tps + fps, np.finfo(float).tiny)
    return recall, precision


def average_precision(match):
    """All-points interpolated AP of a MatchResult."""
    if match.n_gt <= 0:
        raise UndefinedAPError("average precision is undefined without ground truth")
    if not match.tp:
        return 0.0
    recall, precision = precision_recall(match)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def mean_ap(per_class_ap):
    if not per_class_ap:
        raise InvalidArgumentError("mean_ap needs at least one class")
    values = list(per_class_ap.values()) if isinstance(per_class_ap, dict) else list(per_class_ap)
    return float(sum(values) / len(values))


def _finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"angle must be finite, got {v}")


def smallest_angle_diff(a, b):
    """Circular distance between two angles in degrees, in [0, 180]."""
    _finite(a, b)
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def signed_angle_diff(predicted, true):
    """``predicted - true`` wrapped into [-180, 180)."""
    _finite(predicted, true)
    return (predicted - true + 180.0) % 360.0 - 180.0


def orientation_mae(pairs):
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("orientation_mae needs at least one pair")
    return float(sum(smallest_angle_diff(p, t) for p, t in pairs) / len(pairs))


def angular_mse_loss(predicted, true):
    return smallest_angle_diff(predicted, true) ** 2


def angular_mse_grad(predicted, true):
    """Derivative of :func:`angular_mse_loss` with respect to ``predicted``."""
    return 2.0 * signed_angle_diff(predicted, true)


def identification_accuracy(pairs):
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("identification_accuracy needs at least one pair")
    return sum(1 for p, t in pairs if p == t) / len(pairs)


def wrong_run_lengths(stream):
    """Histogram of maximal runs of consecutive wrong frames.

    ``stream`` is a sequence of correctness flags, or a mapping / sequence of
    such sequences (one per tracked robot).
    """
    if isinstance(stream, dict):
        streams = list(stream.values())
    else:
        stream = list(stream)
        streams = [stream] if all(isinstance(s, (bool, np.bool_)) for s in stream) else stream
    hist = Counter()
    for flags in streams:
        run = 0
        for ok in flags:
            if ok:
                if run:
                    hist[run] += 1
                run = 0
            else:
                run += 1
        if run:
            hist[run] += 1
    return dict(sorted(hist.items()))
