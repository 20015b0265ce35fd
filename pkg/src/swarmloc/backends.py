"""Deterministic classical backends for both pipeline stages.

They stand in for the detection and identification networks so the pipeline
can be exercised end to end without trained models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .crops import (
    DEFAULT_CLOSE_RADIUS,
    DEFAULT_OPEN_RADIUS,
    DEFAULT_THRESHOLD,
    RobotCrop,
    background_subtract_mask,
    refine_mask,
    retighten,
)
from .exceptions import ConfigurationError
from .imaging import BBox, area_resize, check_image, pad_to_square, transform_rgba
from .pipeline import Detection, PoseEstimate

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SizePrior:
    """Expected blob pixel area and elongation (major/minor axis ratio, >= 1).

    Both are rotation invariant, so one prior covers every orientation.
    """

    area: tuple
    elongation: tuple = (1.0, 1.6)

    def score(self, area, elongation):
        """Match score in [0.5, 1] inside the ranges, 0 outside."""
        terms = []
        for value, (lo, hi) in ((area, self.area), (elongation, self.elongation)):
            if not lo <= value <= hi:
                return 0.0
            half = math.log(hi / lo) / 2.0
            if half <= 0:
                terms.append(0.0)
                continue
            terms.append(min(1.0, abs(math.log(value / math.sqrt(lo * hi))) / half))
        return 1.0 - 0.25 * sum(terms)

    @classmethod
    def from_dict(cls, d):
        return cls(area=tuple(d["area"]), elongation=tuple(d.get("elongation", (1.0, 1.6))))


def blob_elongation(ys, xs):
    """Square root of the covariance eigenvalue ratio of a pixel set."""
    if len(xs) < 2:
        return 1.0
    cov = np.cov(np.vstack([xs, ys]).astype(np.float64), bias=True) + np.eye(2) / 12.0
    lo, hi = np.linalg.eigvalsh(cov)
    return float(math.sqrt(hi / lo))


def priors_from_library(library, downscale=1.0, scale_range=(0.5, 1.5), slack=(0.85, 1.25)):
    """Size priors per robot type from a crop library ``{type: {id: [RobotCrop]}}``.

    Areas cover every crop at every scale in ``scale_range`` after resampling by
    ``1 / downscale``, widened by ``slack``. Near-round types (elongation < 1.2)
    get ``(1.0, 1.3)``, others their elongation widened by ``slack``.
    """
    if downscale <= 0:
        raise ConfigurationError("downscale must be positive")
    lo, hi = scale_range
    priors = {}
    for robot_type in sorted(library):
        areas, elongations = [], []
        for crops in library[robot_type].values():
            for crop in crops:
                image = crop.image if isinstance(crop, RobotCrop) else crop
                ys, xs = np.nonzero(image[..., 3] > 0)
                areas.append(len(xs))
                elongations.append(blob_elongation(ys, xs))
        if not areas:
            continue
        f = downscale ** 2
        e_lo, e_hi = min(elongations), max(elongations)
        priors[robot_type] = SizePrior(
            area=(min(areas) * lo * lo * slack[0] / f, max(areas) * hi * hi * slack[1] / f),
            elongation=(1.0, 1.3) if e_hi < 1.2 else (max(1.0, e_lo * 0.8), e_hi * 1.25),
        )
    if not priors:
        raise ConfigurationError("crop library has no crops to derive size priors from")
    return priors


class ReferenceDetector(BaseEstimator):
    """Background subtraction plus connected components, typed by size priors.

    ``fit(background)`` stores the empty-scene image at stage 1 resolution. With
    ``fit(None)`` the per-channel median of each frame is used as a uniform
    background, which suits plain-floor scenes.
    """

    def __init__(self, priors=None, threshold=DEFAULT_THRESHOLD, open_radius=DEFAULT_OPEN_RADIUS,
                 close_radius=DEFAULT_CLOSE_RADIUS):
        self.priors = priors
        self.threshold = threshold
        self.open_radius = open_radius
        self.close_radius = close_radius

    def fit(self, background=None, y=None):
        if not self.priors:
            raise ConfigurationError("ReferenceDetector needs at least one size prior")
        self.priors_ = {
            name: p if isinstance(p, SizePrior) else SizePrior.from_dict(p)
            for name, p in sorted(self.priors.items())
        }
        self.background_ = None if background is None else check_image(background, 3, "background")
        return self

    def _background(self, image):
        if self.background_ is not None:
            return self.background_
        color = np.median(image.reshape(-1, 3), axis=0).astype(np.uint8)
        return np.broadcast_to(color, image.shape).copy()

    def predict(self, image):
        check_is_fitted(self, "priors_")
        image = check_image(image, 3, "image")
        mask = background_subtract_mask(image, self._background(image), self.threshold)
        mask = refine_mask(mask, self.open_radius, self.close_radius)
        labels, n = ndimage.label(mask, structure=_EIGHT)
        found = []
        for index, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            ys, xs = np.nonzero(labels[sl] == index)
            area = len(xs)
            elong = blob_elongation(ys, xs)
            best_type, best = None, 0.0
            for name, prior in self.priors_.items():
                s = prior.score(area, elong)
                if s > best:
                    best_type, best = name, s
            if best_type is None:
                continue
            box = BBox(sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)
            found.append(Detection(best_type, box, float(min(1.0, max(0.0, best)))))
        found.sort(key=lambda d: (-d.confidence, d.bbox.y_min, d.bbox.x_min))
        return found


def _template_views(image, angle, size):
    rotated = retighten(transform_rgba(image, 1.0, angle))
    h, w = rotated.shape[:2]
    side = max(h, w)
    square = np.zeros((side, side, 4), dtype=np.uint8)
    y0, x0 = (side - h) // 2, (side - w) // 2
    square[y0:y0 + h, x0:x0 + w] = rotated
    # edge colors into the transparent margin so resampling does not bleed black into the robot
    rgb = pad_to_square(rotated[..., :3])
    small_rgb = area_resize(rgb, (size, size))
    small_alpha = area_resize(square[..., 3:4], (size, size))[..., 0]
    return small_rgb, small_alpha >= 128


class TemplateMatcher(BaseEstimator):
    """Rotation-sweep template matching by masked normalized cross-correlation.

    ``fit`` takes ``{instance_id: [RGBA template or RobotCrop, ...]}`` with every
    template canonically aligned. Each template is rotated in steps of
    ``rotation_step_deg``; ``predict`` returns the best ``(id, angle)``
    hypothesis. The ``refine_top`` best hypotheses and their neighbors within
    ``refine_window_deg`` are rescored with the crop shifted by up to
    ``max_shift`` pixels (at ``match_size``), which absorbs small box errors
    from the first stage. Ties go to the lexicographically smaller id, then the
    smaller angle.
    """

    def __init__(self, rotation_step_deg=1.0, match_size=64, max_shift=3,
                 refine_window_deg=5.0, refine_top=5):
        self.rotation_step_deg = rotation_step_deg
        self.match_size = match_size
        self.max_shift = max_shift
        self.refine_window_deg = refine_window_deg
        self.refine_top = refine_top

    def fit(self, templates, y=None):
        if not templates or not any(len(v) for v in templates.values()):
            raise ConfigurationError("template set is empty")
        if not self.rotation_step_deg > 0:
            raise ConfigurationError("rotation_step_deg must be positive")
        if self.max_shift < 0 or self.refine_top < 1:
            raise ConfigurationError("max_shift must be >= 0 and refine_top >= 1")
        size = int(self.match_size)
        n_steps = max(1, int(round(360.0 / self.rotation_step_deg)))
        angles = [(k * self.rotation_step_deg) % 360.0 for k in range(n_steps)]
        weights, masks, ids, hyp_angles = [], [], [], []
        for instance_id in sorted(templates, key=str):
            for item in templates[instance_id]:
                image = item.image if isinstance(item, RobotCrop) else check_image(item, 4, "template")
                for angle in angles:
                    rgb, mask = _template_views(image, angle, size)
                    m = np.repeat(mask[..., None], 3, axis=2).ravel().astype(np.float64)
                    t = rgb.ravel().astype(np.float64)
                    n = m.sum()
                    centered = (t - (m * t).sum() / n) * m
                    norm = np.linalg.norm(centered)
                    weights.append(centered / norm if norm > 0 else centered)
                    masks.append(mask.ravel())
                    ids.append(str(instance_id))
                    hyp_angles.append(angle)
        self.weights_ = np.asarray(weights, dtype=np.float32)
        self.masks_ = np.asarray(masks, dtype=np.float32)
        # each mask covers three channels
        self.mask_counts_ = 3.0 * self.masks_.sum(axis=1).astype(np.float64)
        self.ids_ = ids
        self.angles_ = np.asarray(hyp_angles)
        self.instance_ids_ = sorted({str(i) for i in templates})
        return self

    def _prepare(self, crop):
        crop = check_image(crop, 3, "crop")
        size = int(self.match_size)
        c = area_resize(pad_to_square(crop), (size, size)).astype(np.float64)
        # NCC ignores offset and gain, so standardize first to keep float32 sums well conditioned
        return (c - c.mean()) / max(c.std(), 1e-6)

    def _ncc(self, rows, views):
        """NCC of hypotheses ``rows`` against each ``(size, size, 3)`` view; shape (views, rows)."""
        flat = views.reshape(len(views), -1, 3)
        per_pixel = np.stack([flat.sum(axis=2), (flat * flat).sum(axis=2)], axis=2)
        num = flat.reshape(len(views), -1).astype(np.float32) @ self.weights_[rows].T
        s1 = per_pixel[..., 0].astype(np.float32) @ self.masks_[rows].T
        s2 = per_pixel[..., 1].astype(np.float32) @ self.masks_[rows].T
        var = np.maximum(s2.astype(np.float64) - s1.astype(np.float64) ** 2 / self.mask_counts_[rows],
                         1e-9)
        return num.astype(np.float64) / np.sqrt(var)

    def scores(self, crop):
        """NCC of the unshifted ``crop`` against every (id, angle) hypothesis."""
        check_is_fitted(self, "weights_")
        return self._ncc(slice(None), self._prepare(crop)[None])[0]

    def _candidates(self, base):
        ids = np.asarray(self.ids_)
        chosen = np.zeros(len(base), dtype=bool)
        for k in np.argsort(-base, kind="stable")[:int(self.refine_top)]:
            gap = np.abs((self.angles_ - self.angles_[k] + 180.0) % 360.0 - 180.0)
            chosen |= (gap <= self.refine_window_deg) & (ids == ids[k])
        return np.flatnonzero(chosen)

    def predict(self, crop, robot_type=None):
        check_is_fitted(self, "weights_")
        c = self._prepare(crop)
        base = self._ncc(slice(None), c[None])[0]
        r = int(self.max_shift)
        if r == 0:
            rows, best_scores = np.arange(len(base)), base
        else:
            rows = self._candidates(base)
            size = c.shape[0]
            padded = np.pad(c, ((r, r), (r, r), (0, 0)), mode="edge")
            views = np.stack([padded[r + dy:r + dy + size, r + dx:r + dx + size]
                              for dy in range(-r, r + 1) for dx in range(-r, r + 1)])
            best_scores = self._ncc(rows, views).max(axis=0)
        # rows are in (id, angle) order, so the first maximum honors the tie-break
        k = int(np.argmax(best_scores))
        best = int(rows[k])
        angle = float(self.angles_[best]) % 360.0
        return PoseEstimate(self.ids_[best], angle, float(np.clip(best_scores[k], 0.0, 1.0)))


def reference_second_stage(crop, templates, rotation_step_deg=1.0, match_size=64, max_shift=3):
    """One-shot convenience wrapper around :class:`TemplateMatcher`."""
    return TemplateMatcher(rotation_step_deg, match_size, max_shift).fit(templates).predict(crop)
