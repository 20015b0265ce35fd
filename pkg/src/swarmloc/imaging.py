"""Pixel-level primitives: image validation, alpha compositing, affine
transforms, binary masks and bounding boxes.

Images are numpy ``uint8`` arrays of shape ``(height, width, channels)`` with
the origin at the top-left corner, x to the right and y downward. Rotations are
counterclockwise as seen on the displayed image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .exceptions import EmptyMaskError, InvalidArgumentError

__all__ = [
    "BBox",
    "check_image",
    "check_mask",
    "alpha_composite",
    "transform_rgba",
    "tight_bbox",
    "crop_to_bbox",
    "area_resize",
    "pad_to_square",
    "read_image",
    "write_image",
    "read_mask",
]


@dataclass(frozen=True)
class BBox:
    """Half-open pixel box ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidArgumentError(f"degenerate bbox {self.as_list()}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def translate(self, dx, dy):
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def clip(self, width, height):
        """Clip to a ``width x height`` canvas; returns None if nothing is left."""
        x0, y0 = max(self.x_min, 0), max(self.y_min, 0)
        x1, y1 = min(self.x_max, width), min(self.y_max, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def scale(self, sx, sy):
        return BBox(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)

    def rounded(self):
        return BBox(*(int(round(v)) for v in self.as_list()))

    @classmethod
    def from_list(cls, values):
        if len(values) != 4:
            raise InvalidArgumentError(f"bbox needs 4 values, got {len(values)}")
        return cls(*values)


def check_image(image, channels=None, name="image"):
    """Validate an 8-bit image array and return it as a contiguous array."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise InvalidArgumentError(f"{name} must be uint8, got {image.dtype}")
    if image.ndim != 3 or image.shape[2] not in (3, 4):
        raise InvalidArgumentError(f"{name} must have shape (H, W, 3|4), got {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise InvalidArgumentError(f"{name} is empty")
    if channels is not None and image.shape[2] != channels:
        raise InvalidArgumentError(f"{name} must have {channels} channels, got {image.shape[2]}")
    return np.ascontiguousarray(image)


def check_mask(mask, shape=None, name="mask"):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise InvalidArgumentError(f"{name} shape {mask.shape} does not match {tuple(shape[:2])}")
    return mask.astype(bool, copy=False)


def _paste_window(dst_shape, src_shape, top_left):
    """Overlapping slices of dst and src for a paste at ``top_left = (x, y)``."""
    x, y = int(top_left[0]), int(top_left[1])
    dh, dw = dst_shape[:2]
    sh, sw = src_shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + sw, dw), min(y + sh, dh)
    if x0 >= x1 or y0 >= y1:
        return None
    return (slice(y0, y1), slice(x0, x1)), (slice(y0 - y, y1 - y), slice(x0 - x, x1 - x))


def alpha_composite(dst, src, top_left=(0, 0)):
    """Blend an RGBA ``src`` over an RGB ``dst`` with its top-left corner at ``top_left``.

    Off-canvas parts of ``src`` are discarded. Returns a new RGB array.
    """
    dst = check_image(dst, 3, "dst")
    src = check_image(src, 4, "src")
    out = dst.copy()
    window = _paste_window(dst.shape, src.shape, top_left)
    if window is None:
        return out
    dwin, swin = window
    patch = src[swin]
    a = patch[..., 3:4].astype(np.float64) / 255.0
    blended = patch[..., :3] * a + dst[dwin] * (1.0 - a)
    out[dwin] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


def _canvas_size(extent, src_size):
    # same parity as the source so that centers stay pixel-aligned for round trips
    n = max(1, math.ceil(extent - 1e-6))
    if (n - src_size) % 2:
        n += 1
    return n


def transform_rgba(src, scale=1.0, rotation=0.0):
    """Scale and rotate (degrees, counterclockwise) an RGBA image about its center.

    The output canvas covers the whole transformed image; everything outside
    the source is transparent. Color and alpha are resampled bilinearly.
    """
    src = check_image(src, 4, "src")
    if not (scale > 0) or not math.isfinite(scale):
        raise InvalidArgumentError(f"scale must be positive, got {scale}")
    if not math.isfinite(rotation):
        raise InvalidArgumentError(f"rotation must be finite, got {rotation}")
    turns = (rotation % 360.0) / 90.0
    if scale == 1.0 and turns == int(turns):
        return np.ascontiguousarray(np.rot90(src, k=int(turns)))

    h, w = src.shape[:2]
    theta = math.radians(rotation)
    c, s = math.cos(theta), math.sin(theta)
    out_w = _canvas_size(scale * (w * abs(c) + h * abs(s)), w)
    out_h = _canvas_size(scale * (w * abs(s) + h * abs(c)), h)

    xs = np.arange(out_w, dtype=np.float64) + 0.5 - out_w / 2.0
    ys = np.arange(out_h, dtype=np.float64) + 0.5 - out_h / 2.0
    xo, yo = np.meshgrid(xs, ys)
    # inverse of x' = x c + y s, y' = -x s + y c (counterclockwise with y pointing down)
    sx = (xo * c - yo * s) / scale + w / 2.0 - 0.5
    sy = (xo * s + yo * c) / scale + h / 2.0 - 0.5

    # transparent one-pixel frame that keeps the edge colors, so borders do not darken
    padded = np.pad(src, ((1, 1), (1, 1), (0, 0)), mode="edge").astype(np.float64)
    padded[0, :, 3] = padded[-1, :, 3] = 0
    padded[:, 0, 3] = padded[:, -1, 3] = 0

    px = np.clip(sx + 1.0, 0.0, w + 1.0)
    py = np.clip(sy + 1.0, 0.0, h + 1.0)
    x0 = np.clip(np.floor(px).astype(np.intp), 0, w)
    y0 = np.clip(np.floor(py).astype(np.intp), 0, h)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    top = padded[y0, x0] * (1 - fx) + padded[y0, x0 + 1] * fx
    bottom = padded[y0 + 1, x0] * (1 - fx) + padded[y0 + 1, x0 + 1] * fx
    value = top * (1 - fy) + bottom * fy

    # the source covers [-0.5, w - 0.5] x [-0.5, h - 0.5] in pixel-center coordinates
    outside = (sx < -0.5) | (sx > w - 0.5) | (sy < -0.5) | (sy > h - 0.5)
    value[outside] = 0
    out = np.clip(np.rint(value), 0, 255).astype(np.uint8)
    out[out[..., 3] == 0] = 0
    return out


def _plane(mask_or_rgba):
    arr = np.asarray(mask_or_rgba)
    if arr.ndim == 3:
        if arr.shape[2] != 4:
            raise InvalidArgumentError("tight_bbox needs a mask or an RGBA image")
        return arr[..., 3] > 0
    return check_mask(arr)


def tight_bbox(mask_or_rgba):
    """Smallest half-open box containing every set pixel (or every alpha > 0 pixel)."""
    plane = _plane(mask_or_rgba)
    rows = np.flatnonzero(plane.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("mask has no set pixels")
    cols = np.flatnonzero(plane.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def crop_to_bbox(image, bbox):
    b = bbox.rounded()
    return np.ascontiguousarray(image[b.y_min:b.y_max, b.x_min:b.x_max])


def _area_weights(n_in, n_out):
    # row i holds the fraction of each input cell covered by output cell i
    edges = np.arange(n_out + 1, dtype=np.float64) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def area_resize(image, size):
    """Resample to ``size = (width, height)`` by area averaging."""
    image = np.asarray(image)
    width, height = int(size[0]), int(size[1])
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"target size must be at least 1x1, got {size}")
    h, w = image.shape[:2]
    if (w, h) == (width, height):
        return image.copy()
    wy = _area_weights(h, height)
    wx = _area_weights(w, width)
    out = np.einsum("ij,jkc,lk->ilc", wy, image.astype(np.float64), wx, optimize=True)
    return np.clip(np.rint(out), 0, 255).astype(image.dtype)


def pad_to_square(image):
    """Pad the short side symmetrically by edge replication."""
    h, w = image.shape[:2]
    if h == w:
        return image
    d = abs(h - w)
    before, after = d // 2, d - d // 2
    pad = ((before, after), (0, 0)) if h < w else ((0, 0), (before, after))
    pad += ((0, 0),) * (image.ndim - 2)
    return np.pad(image, pad, mode="edge")


def read_image(path, mode=None):
    """Load a PNG/JPEG as a uint8 array. ``mode`` may force "RGB" or "RGBA"."""
    with PILImage.open(path) as im:
        if mode is not None and im.mode != mode:
            im = im.convert(mode)
        elif im.mode not in ("RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(path, image):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    PILImage.fromarray(arr).save(path, format="PNG" if path.suffix.lower() == ".png" else None)


def read_mask(path):
    """Load a 1-channel 0/255 PNG mask as a boolean array."""
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L")) > 127
