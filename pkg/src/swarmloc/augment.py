"""Label-aware augmentations for the first and second stage training data."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .exceptions import InvalidArgumentError, InvalidCropError
from .imaging import BBox

SSD_MIN_IOUS = (None, 0.1, 0.3, 0.5, 0.7, 0.9, "any")
SSD_MAX_TRIALS = 50


def flip_orientation(theta, axis):
    """Orientation after mirroring, for the counterclockwise-from-+x convention."""
    if axis == "horizontal":
        return (180.0 - theta) % 360.0
    if axis == "vertical":
        return (360.0 - theta) % 360.0
    raise InvalidArgumentError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def flip_bbox(bbox, axis, width, height):
    if axis == "horizontal":
        return BBox(width - bbox.x_max, bbox.y_min, width - bbox.x_min, bbox.y_max)
    if axis == "vertical":
        return BBox(bbox.x_min, height - bbox.y_max, bbox.x_max, height - bbox.y_min)
    raise InvalidArgumentError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def flip_augment(frame, gt, axis):
    """Mirror a frame and its ground truth.

    ``horizontal`` mirrors across the vertical axis (left/right), ``vertical``
    across the horizontal axis (top/bottom).
    """
    height, width = frame.shape[:2]
    if axis == "horizontal":
        image = frame[:, ::-1]
    elif axis == "vertical":
        image = frame[::-1, :]
    else:
        raise InvalidArgumentError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    flipped = [
        replace(r, bbox=flip_bbox(r.bbox, axis, width, height),
                orientation=flip_orientation(r.orientation, axis))
        for r in gt
    ]
    return np.ascontiguousarray(image), flipped


def box_iou(a, b):
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _inside(point, box):
    x, y = point
    return box.x_min <= x < box.x_max and box.y_min <= y < box.y_max


def sample_ssd_patch(width, height, boxes, rng, max_trials=SSD_MAX_TRIALS):
    """Draw one SSD-style patch.

    Returns ``(patch, min_iou)``: ``patch`` is None for the whole-image branch or
    when every trial failed; ``min_iou`` is the sampled constraint (None when
    unconstrained).
    """
    choice = SSD_MIN_IOUS[int(rng.integers(len(SSD_MIN_IOUS)))]
    if choice is None:
        return None, None
    min_iou = None if choice == "any" else float(choice)
    for _ in range(max_trials):
        area = rng.uniform(0.1, 1.0)
        aspect = rng.uniform(0.5, 2.0)
        w = int(round(width * math.sqrt(area * aspect)))
        h = int(round(height * math.sqrt(area / aspect)))
        if w < 1 or h < 1 or w > width or h > height:
            continue
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        patch = BBox(x, y, x + w, y + h)
        kept = [b for b in boxes if _inside(b.center, patch)]
        if not kept:
            continue
        if min_iou is not None and any(box_iou(b, patch) < min_iou for b in kept):
            continue
        return patch, min_iou
    return None, min_iou


def apply_patch(frame, gt, patch):
    """Crop ``frame`` to ``patch``, keeping ground truth whose center lies inside."""
    x0, y0 = int(patch.x_min), int(patch.y_min)
    image = np.ascontiguousarray(frame[y0:int(patch.y_max), x0:int(patch.x_max)])
    kept = []
    for r in gt:
        if not _inside(r.bbox.center, patch):
            continue
        clipped = BBox(max(r.bbox.x_min, patch.x_min), max(r.bbox.y_min, patch.y_min),
                       min(r.bbox.x_max, patch.x_max), min(r.bbox.y_max, patch.y_max))
        kept.append(replace(r, bbox=clipped.translate(-x0, -y0)))
    return image, kept


def ssd_random_crop(frame, gt, seed):
    """SSD random crop; falls back to the unchanged frame when no patch qualifies."""
    if not gt:
        raise InvalidArgumentError("ssd_random_crop needs at least one ground-truth box")
    rng = np.random.default_rng(seed)
    height, width = frame.shape[:2]
    patch, _ = sample_ssd_patch(width, height, [r.bbox for r in gt], rng)
    if patch is None:
        return frame.copy(), list(gt)
    return apply_patch(frame, gt, patch)


def variance_box(bbox, width, height, rng, low=-0.10, high=0.15):
    """Box with each side moved outward by ``U[low, high]`` of the box dimension.

    Displacements are truncated toward zero to whole pixels, so the result never
    leaves the ``[1 + 2 low, 1 + 2 high]`` size band before clamping.
    """
    if low > high:
        raise InvalidArgumentError(f"low {low} > high {high}")
    f = rng.uniform(low, high, size=4) if high > low else np.full(4, float(low))
    w, h = bbox.width, bbox.height
    left, top, right, bottom = (math.trunc(round(v, 9)) for v in (f[0] * w, f[1] * h, f[2] * w, f[3] * h))
    x0 = max(0, int(bbox.x_min) - left)
    y0 = max(0, int(bbox.y_min) - top)
    x1 = min(width, int(bbox.x_max) + right)
    y1 = min(height, int(bbox.y_max) + bottom)
    if x0 >= x1 or y0 >= y1:
        raise InvalidCropError(f"crop of {bbox.as_list()} is empty after clamping")
    return BBox(x0, y0, x1, y1)


def crop_with_variance(frame, bbox, low=-0.10, high=0.15, seed=None):
    """Crop around ``bbox`` with random per-side slack (negative means inward)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    height, width = frame.shape[:2]
    box = variance_box(bbox, width, height, rng, low, high)
    return np.ascontiguousarray(frame[box.y_min:box.y_max, box.x_min:box.x_max])
