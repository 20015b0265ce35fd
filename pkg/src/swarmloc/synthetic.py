"""Procedural robot crops, decoys and backgrounds.

These stand in for recorded crops in tests, benchmarks and demos. Every robot
faces +x (orientation 0) and carries an asymmetric feature so that its heading
is recoverable.
"""
from __future__ import annotations

import numpy as np

from .crops import RobotCrop, retighten
from .backends import priors_from_library

ROBOT_TYPES = ("copter", "sphero", "youbot")

# identification patterns per type, as RGB colors
PATTERNS = {
    "copter": {
        "A": [(255, 40, 40), (40, 40, 255), (255, 40, 40), (40, 40, 255)],
        "B": [(40, 220, 40), (40, 220, 40), (255, 255, 40), (255, 255, 40)],
        "C": [(255, 40, 255), (40, 220, 220), (40, 220, 220), (255, 40, 255)],
    },
    "sphero": {
        "red": [(255, 30, 30)],
        "green": [(30, 230, 30)],
        "white": [(250, 250, 250)],
    },
    "youbot": {
        "A": [(250, 250, 250), (30, 30, 30)],
        "B": [(250, 200, 0), (30, 30, 30)],
        "C": [(0, 200, 250), (30, 30, 30)],
    },
}


def _canvas(w, h):
    return np.zeros((h, w, 4), dtype=np.uint8)


def _grid(w, h):
    yy, xx = np.mgrid[0:h, 0:w]
    return xx + 0.5, yy + 0.5


def _fill(img, mask, color):
    img[mask, :3] = color
    img[mask, 3] = 255


def _disc(xx, yy, cx, cy, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _rect(xx, yy, x0, y0, x1, y1):
    return (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)


def make_copter(pattern="A", size=56):
    """Square frame with four rotors; front rotors red, rear green, ID LEDs in the middle."""
    s = size
    img = _canvas(s, s)
    xx, yy = _grid(s, s)
    r = s * 0.2
    body = _rect(xx, yy, s * 0.2, s * 0.2, s * 0.8, s * 0.8)
    _fill(img, body, (30, 30, 35))
    rotors = [(s * 0.2, s * 0.2), (s * 0.2, s * 0.8), (s * 0.8, s * 0.2), (s * 0.8, s * 0.8)]
    for cx, cy in rotors:
        _fill(img, _disc(xx, yy, cx, cy, r), (200, 200, 210))
    # position LEDs: front (+x) red, rear green
    for cx, cy in rotors:
        color = (230, 30, 30) if cx > s / 2 else (30, 200, 30)
        _fill(img, _disc(xx, yy, cx, cy, r * 0.45), color)
    leds = PATTERNS["copter"][pattern]
    offsets = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for (dx, dy), color in zip(offsets, leds):
        _fill(img, _disc(xx, yy, s / 2 + dx * s * 0.09, s / 2 + dy * s * 0.09, s * 0.06), color)
    # heading bar toward the front
    _fill(img, _rect(xx, yy, s * 0.62, s * 0.46, s * 0.8, s * 0.54), (240, 240, 240))
    return retighten(img)


def make_sphero(pattern="red", size=32):
    """Disc with a blue tail light toward the rear and a colored ID LED in the center."""
    s = size
    img = _canvas(s, s)
    xx, yy = _grid(s, s)
    c = s / 2
    _fill(img, _disc(xx, yy, c, c, s * 0.48), (200, 200, 210))
    _fill(img, _disc(xx, yy, c, c, s * 0.40), (225, 225, 235))
    _fill(img, _rect(xx, yy, c - s * 0.44, c - s * 0.07, c - s * 0.06, c + s * 0.07), (20, 40, 255))
    _fill(img, _disc(xx, yy, c + s * 0.05, c, s * 0.14), PATTERNS["sphero"][pattern][0])
    return retighten(img)


def make_youbot(pattern="A", size=(88, 52)):
    """Rectangular base with an arm at the front and a lettered marker plate."""
    w, h = size
    img = _canvas(w, h)
    xx, yy = _grid(w, h)
    _fill(img, _rect(xx, yy, 0, 0, w * 0.85, h), (230, 120, 20))
    for cx in (w * 0.15, w * 0.7):
        for cy in (h * 0.08, h * 0.92):
            _fill(img, _rect(xx, yy, cx - w * 0.08, cy - h * 0.08, cx + w * 0.08, cy + h * 0.08),
                  (40, 40, 40))
    _fill(img, _rect(xx, yy, w * 0.7, h * 0.38, w, h * 0.62), (20, 20, 25))
    plate, ink = PATTERNS["youbot"][pattern]
    px0, py0, px1, py1 = w * 0.25, h * 0.25, w * 0.55, h * 0.75
    _fill(img, _rect(xx, yy, px0, py0, px1, py1), plate)
    pw, ph = px1 - px0, py1 - py0
    strokes = {
        "A": [(0.1, 0.1, 0.3, 0.9), (0.1, 0.1, 0.9, 0.3), (0.1, 0.45, 0.9, 0.6)],
        "B": [(0.1, 0.1, 0.3, 0.9), (0.1, 0.1, 0.8, 0.25), (0.1, 0.75, 0.8, 0.9), (0.7, 0.1, 0.9, 0.9)],
        "C": [(0.1, 0.1, 0.3, 0.9), (0.1, 0.1, 0.9, 0.25), (0.1, 0.75, 0.9, 0.9)],
    }[pattern]
    for a, b, c, d in strokes:
        _fill(img, _rect(xx, yy, px0 + a * pw, py0 + b * ph, px0 + c * pw, py0 + d * ph), ink)
    return retighten(img)


_MAKERS = {"copter": make_copter, "sphero": make_sphero, "youbot": make_youbot}


def make_robot(robot_type, pattern):
    return _MAKERS[robot_type](pattern)


def robot_library(types=ROBOT_TYPES):
    """``{type: {id: [RobotCrop]}}`` with one crop per identification pattern."""
    return {
        t: {p: [RobotCrop(make_robot(t, p), t, p, method="synthetic")] for p in PATTERNS[t]}
        for t in types
    }


def default_priors(downscale=2.0, scale_range=(0.8, 1.2)):
    """Size priors matching :func:`robot_library` at a given stage 1 downscale factor."""
    return priors_from_library(robot_library(), downscale, scale_range)


def make_decoys():
    """Decoys whose size or shape sets them apart from every robot."""
    decoys = []
    stick = _canvas(110, 10)
    stick[..., :3] = (160, 40, 200)
    stick[..., 3] = 255
    decoys.append(stick)
    big = _canvas(130, 130)
    xx, yy = _grid(130, 130)
    _fill(big, _disc(xx, yy, 65, 65, 64), (20, 160, 90))
    decoys.append(big)
    dot = _canvas(8, 8)
    xx, yy = _grid(8, 8)
    _fill(dot, _disc(xx, yy, 4, 4, 3.8), (250, 250, 120))
    decoys.append(dot)
    return decoys


def plain_background(width, height, color, noise=0, seed=0):
    bg = np.empty((height, width, 3), dtype=np.uint8)
    bg[...] = color
    if noise:
        rng = np.random.default_rng(seed)
        jitter = rng.integers(-noise, noise + 1, size=bg.shape)
        bg = np.clip(bg.astype(int) + jitter, 0, 255).astype(np.uint8)
    return bg


def random_blob_crop(rng, min_size=30, max_size=70):
    """RGBA crop of a random convex-ish blob with a textured fill and binary alpha."""
    w = int(rng.integers(min_size, max_size + 1))
    h = int(rng.integers(min_size, max_size + 1))
    xx, yy = _grid(w, h)
    cx, cy = w / 2, h / 2
    angles = np.arctan2(yy - cy, xx - cx)
    radius = np.hypot((xx - cx) / (w / 2), (yy - cy) / (h / 2))
    k = int(rng.integers(2, 5))
    phase = rng.uniform(0, 2 * np.pi)
    limit = 0.92 + 0.08 * np.cos(k * angles + phase)
    alpha = radius <= limit
    base = rng.integers(0, 256, size=3)
    gx = rng.uniform(-1.5, 1.5)
    gy = rng.uniform(-1.5, 1.5)
    rgb = base[None, None, :] + (gx * xx + gy * yy)[..., None]
    img = np.zeros((h, w, 4), dtype=np.uint8)
    img[..., :3] = np.clip(rgb, 0, 255).astype(np.uint8)
    img[..., 3] = np.where(alpha, 255, 0)
    return retighten(img)
