"""Robot crop extraction from recorded frame sequences.

Two routes produce alpha-masked crops: a shared hand-made mask applied to a
static sequence (manual), or background subtraction followed by thresholding
and morphology (automatic).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyMaskError, ExtractionFailedError, InvalidArgumentError
from .imaging import check_image, check_mask, tight_bbox, transform_rgba

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 25
DEFAULT_OPEN_RADIUS = 1
DEFAULT_CLOSE_RADIUS = 2

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class RobotCrop:
    """Tightly cropped RGBA robot image in canonical orientation."""

    image: np.ndarray
    robot_type: str
    instance_id: str
    canonical_orientation: float = 0.0
    source_frame: str | None = None
    method: str = "automatic"
    extra: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.image.shape[1], self.image.shape[0]


def background_subtract_mask(frame, background, threshold=DEFAULT_THRESHOLD):
    """Pixels whose largest per-channel absolute difference exceeds ``threshold``."""
    frame = check_image(frame, 3, "frame")
    background = check_image(background, 3, "background")
    if frame.shape != background.shape:
        raise InvalidArgumentError(
            f"frame {frame.shape} and background {background.shape} differ in size"
        )
    diff = np.abs(frame.astype(np.int16) - background.astype(np.int16)).max(axis=2)
    return diff > threshold


def disc(radius):
    """Boolean disc of the given radius (the structuring element used by refine_mask)."""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def _within(mask, radius):
    """Pixels whose Euclidean distance to a set pixel of ``mask`` is at most ``radius``."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    dist = ndimage.distance_transform_edt(~mask)
    return dist * dist <= radius * radius + 1e-9


def _dilate(mask, radius):
    # disc structuring element; pixels beyond the frame are unset
    return _within(np.asarray(mask, dtype=bool), radius)


def _erode(mask, radius):
    # pixels beyond the frame count as set, so objects cut by the border keep their edge
    return ~_within(~np.asarray(mask, dtype=bool), radius)


def refine_mask(mask, open_radius=DEFAULT_OPEN_RADIUS, close_radius=DEFAULT_CLOSE_RADIUS):
    """Opening with a disc of ``open_radius`` followed by closing with ``close_radius``."""
    if open_radius < 0 or close_radius < 0:
        raise InvalidArgumentError("morphology radii must be >= 0")
    out = check_mask(mask).copy()
    if open_radius > 0:
        out = _dilate(_erode(out, open_radius), open_radius)
    if close_radius > 0:
        out = _erode(_dilate(out, close_radius), close_radius)
    return out


def largest_component(mask):
    """Largest 8-connected component; ties go to the component seen first in raster order."""
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        raise EmptyMaskError("mask has no set pixels")
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n + 1)
    sizes[0] = 0
    values, first = np.unique(flat, return_index=True)
    first_seen = dict(zip(values.tolist(), first.tolist()))
    candidates = np.flatnonzero(sizes == sizes.max())
    best = min(candidates, key=lambda lab: first_seen[int(lab)])
    return labels == best


def extract_crop(frame, mask, robot_type, instance_id, frame_id=None, method="automatic"):
    """Cut the largest masked object out of ``frame`` as an RGBA crop."""
    frame = check_image(frame, 3, "frame")
    mask = check_mask(mask, frame.shape)
    if not mask.any():
        raise ExtractionFailedError(f"empty mask for frame {frame_id}", frame=frame_id)
    component = largest_component(mask)
    box = tight_bbox(component)
    rows = slice(box.y_min, box.y_max)
    cols = slice(box.x_min, box.x_max)
    alpha = np.where(component[rows, cols], 255, 0).astype(np.uint8)
    rgba = np.dstack([frame[rows, cols], alpha])
    return RobotCrop(
        image=rgba,
        robot_type=str(robot_type),
        instance_id=str(instance_id),
        source_frame=None if frame_id is None else str(frame_id),
        method=method,
    )


def manual_crop_sequence(frames, single_mask, robot_type, instance_id):
    """Apply one hand-made mask to every frame of a static sequence."""
    crops = []
    for index, frame in enumerate(frames):
        try:
            crops.append(
                extract_crop(frame, single_mask, robot_type, instance_id,
                             frame_id=index, method="manual")
            )
        except (ExtractionFailedError, InvalidArgumentError) as exc:
            raise ExtractionFailedError(f"frame {index}: {exc}", frame=index) from exc
    return crops


def retighten(rgba):
    """Drop fully transparent border rows and columns."""
    box = tight_bbox(rgba)
    return np.ascontiguousarray(rgba[box.y_min:box.y_max, box.x_min:box.x_max])


def align_crop(crop, measured_orientation):
    """Rotate a crop so that its orientation becomes 0."""
    rotated = transform_rgba(crop.image, 1.0, -float(measured_orientation))
    return replace(crop, image=retighten(rotated), canonical_orientation=0.0)


class CropExtractor(TransformerMixin, BaseEstimator):
    """Automatic crop extraction as an estimator.

    ``fit`` takes the empty-scene background image; ``transform`` maps a
    sequence of frames to RobotCrops of a single robot instance.
    """

    def __init__(self, robot_type="robot", instance_id="0", threshold=DEFAULT_THRESHOLD,
                 open_radius=DEFAULT_OPEN_RADIUS, close_radius=DEFAULT_CLOSE_RADIUS,
                 orientation=0.0):
        self.robot_type = robot_type
        self.instance_id = instance_id
        self.threshold = threshold
        self.open_radius = open_radius
        self.close_radius = close_radius
        self.orientation = orientation

    def fit(self, background, y=None):
        self.background_ = check_image(background, 3, "background")
        return self

    def masks(self, frames):
        check_is_fitted(self, "background_")
        for frame in frames:
            raw = background_subtract_mask(frame, self.background_, self.threshold)
            yield refine_mask(raw, self.open_radius, self.close_radius)

    def transform(self, frames):
        frames = list(frames)
        crops = []
        for index, (frame, mask) in enumerate(zip(frames, self.masks(frames))):
            crop = extract_crop(frame, mask, self.robot_type, self.instance_id, frame_id=index)
            if self.orientation:
                crop = align_crop(crop, self.orientation)
            crops.append(crop)
        return crops
