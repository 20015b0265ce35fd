import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarmloc.exceptions import EmptyMaskError, InvalidArgumentError
from swarmloc.imaging import (
    BBox,
    alpha_composite,
    area_resize,
    pad_to_square,
    read_image,
    tight_bbox,
    transform_rgba,
    write_image,
)

from conftest import solid_rgba


def random_rgba(rng, w, h, opaque=True):
    img = rng.integers(0, 256, size=(h, w, 4), dtype=np.uint8)
    if opaque:
        img[..., 3] = 255
    return img


# bbox

def test_bbox_rejects_degenerate():
    with pytest.raises(InvalidArgumentError):
        BBox(3, 3, 3, 5)


def test_bbox_clip_and_area():
    b = BBox(-5, 2, 10, 8)
    assert b.area == 90
    assert b.clip(6, 6) == BBox(0, 2, 6, 6)
    assert BBox(10, 10, 12, 12).clip(5, 5) is None


# alpha_composite

def test_zero_alpha_is_identity(rng):
    dst = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    src = random_rgba(rng, 8, 6)
    src[..., 3] = 0
    assert np.array_equal(alpha_composite(dst, src, (4, 5)), dst)


def test_opaque_overwrite(rng):
    dst = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    src = random_rgba(rng, 8, 6)
    out = alpha_composite(dst, src, (0, 0))
    assert np.array_equal(out[:6, :8], src[..., :3])
    assert np.array_equal(out[6:], dst[6:])
    assert np.array_equal(out[:, 8:], dst[:, 8:])


def test_half_alpha_blend():
    dst = np.full((1, 1, 3), 100, dtype=np.uint8)
    src = solid_rgba(1, 1, (200, 200, 200), alpha=128)
    out = alpha_composite(dst, src)
    expected = 200 * 128 / 255 + 100 * (1 - 128 / 255)
    assert np.all(np.abs(out.astype(float) - expected) <= 1)
    assert np.all(np.abs(out.astype(int) - 150) <= 1)


def test_composite_past_border_discards_off_canvas(rng):
    dst = np.zeros((10, 10, 3), dtype=np.uint8)
    src = solid_rgba(6, 6, (255, 255, 255))
    out = alpha_composite(dst, src, (7, -3))
    assert out[:3, 7:].min() == 255
    assert out[3:].max() == 0 and out[:, :7].max() == 0


@given(st.integers(1, 12), st.integers(1, 12), st.integers(-15, 25), st.integers(-15, 25),
       st.integers(0, 2**32 - 1))
def test_zero_alpha_identity_any_placement(w, h, x, y, seed):
    rng = np.random.default_rng(seed)
    dst = rng.integers(0, 256, size=(13, 17, 3), dtype=np.uint8)
    src = random_rgba(rng, w, h)
    src[..., 3] = 0
    assert np.array_equal(alpha_composite(dst, src, (x, y)), dst)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(-15, 25), st.integers(-15, 25),
       st.integers(0, 2**32 - 1))
def test_composite_then_crop_closure(w, h, x, y, seed):
    rng = np.random.default_rng(seed)
    src = np.zeros((h, w, 4), dtype=np.uint8)
    src[..., 3] = rng.integers(0, 2, size=(h, w)) * 255
    if not src[..., 3].any():
        src[0, 0, 3] = 255
    canvas_alpha = np.zeros((13, 17, 4), dtype=np.uint8)
    # paste the alpha plane onto an empty canvas by hand to get the footprint
    own = tight_bbox(src).translate(x, y).clip(17, 13)
    ys, xs = np.nonzero(src[..., 3])
    xs, ys = xs + x, ys + y
    keep = (xs >= 0) & (xs < 17) & (ys >= 0) & (ys < 13)
    canvas_alpha[ys[keep], xs[keep], 3] = 255
    if own is None or not keep.any():
        assert not canvas_alpha[..., 3].any()
        return
    got = tight_bbox(canvas_alpha)
    # the clipped tight box of the source can be larger than the footprint of its clipped pixels
    assert own.x_min <= got.x_min and own.y_min <= got.y_min
    assert got.x_max <= own.x_max and got.y_max <= own.y_max


def test_composite_then_crop_closure_solid():
    src = solid_rgba(7, 5)
    canvas = np.zeros((20, 20, 3), dtype=np.uint8)
    out = alpha_composite(canvas, src, (16, -2))
    mask = out.any(axis=2)
    assert tight_bbox(mask) == tight_bbox(src).translate(16, -2).clip(20, 20)


# transform_rgba

def test_identity_transform_is_byte_identical(rng):
    img = random_rgba(rng, 13, 7, opaque=False)
    assert np.array_equal(transform_rgba(img, 1.0, 0.0), img)


def test_quarter_turn_swaps_dimensions(rng):
    img = random_rgba(rng, 13, 7)
    assert transform_rgba(img, 1.0, 90.0).shape == (13, 7, 4)


def test_quarter_turn_is_counterclockwise():
    img = np.zeros((3, 3, 4), dtype=np.uint8)
    img[1, 2] = (255, 0, 0, 255)  # right of center, the +x direction
    out = transform_rgba(img, 1.0, 90.0)
    ys, xs = np.nonzero(out[..., 3])
    assert (ys[0], xs[0]) == (0, 1)  # now above center on screen


def test_rotation_45_canvas():
    img = solid_rgba(100, 100)
    out = transform_rgba(img, 1.0, 45.0)
    assert out.shape[:2] == (math.ceil(100 * math.sqrt(2)),) * 2 == (142, 142)


def test_nonpositive_scale_rejected():
    with pytest.raises(InvalidArgumentError):
        transform_rgba(solid_rgba(4, 4), 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        transform_rgba(solid_rgba(4, 4), -1.0, 10.0)


@given(st.floats(0.0, 360.0), st.integers(0, 2**32 - 1))
def test_rotation_round_trip(theta, seed):
    rng = np.random.default_rng(seed)
    # smooth content so bilinear resampling error stays small
    yy, xx = np.mgrid[0:40, 0:56]
    img = np.zeros((40, 56, 4), dtype=np.uint8)
    base = rng.uniform(40, 200, size=3)
    grad = rng.uniform(-1.5, 1.5, size=(2, 3))
    img[..., :3] = np.clip(base + xx[..., None] * grad[0] + yy[..., None] * grad[1], 0, 255)
    img[..., 3] = 255
    back = transform_rgba(transform_rgba(img, 1.0, theta), 1.0, -theta)
    bh, bw = back.shape[:2]
    oy, ox = (bh - 40) // 2, (bw - 56) // 2
    region = back[oy:oy + 40, ox:ox + 56]
    both = (region[..., 3] == 255) & (img[..., 3] == 255)
    assert both.sum() > 0.5 * both.size
    err = np.abs(region[..., :3].astype(int) - img[..., :3].astype(int))[both].mean()
    assert err <= 2.0


@given(st.floats(0.3, 3.0), st.integers(3, 60), st.integers(3, 60))
def test_scaled_tight_bbox_dimensions(scale, w, h):
    out = transform_rgba(solid_rgba(w, h), scale, 0.0)
    box = tight_bbox(out)
    assert abs(box.width - round(scale * w)) <= 1
    assert abs(box.height - round(scale * h)) <= 1


# tight_bbox

def test_tight_bbox_examples():
    m = np.zeros((10, 10), dtype=bool)
    m[5, 3] = True
    assert tight_bbox(m) == BBox(3, 5, 4, 6)
    assert tight_bbox(np.ones((10, 10), dtype=bool)) == BBox(0, 0, 10, 10)
    m = np.zeros((10, 10), dtype=bool)
    m[2, 2] = m[4, 7] = True
    assert tight_bbox(m) == BBox(2, 2, 8, 5)


def test_tight_bbox_empty():
    with pytest.raises(EmptyMaskError):
        tight_bbox(np.zeros((4, 4), dtype=bool))


@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 14)), min_size=1, max_size=30))
def test_tight_bbox_matches_min_max(points):
    m = np.zeros((15, 20), dtype=bool)
    for x, y in points:
        m[y, x] = True
    xs, ys = zip(*points)
    assert tight_bbox(m) == BBox(min(xs), min(ys), max(xs) + 1, max(ys) + 1)


# resampling and IO

def test_area_resize_two_by_two_blocks(rng):
    img = rng.integers(0, 256, size=(6, 8, 3), dtype=np.uint8)
    out = area_resize(img, (4, 3))
    expected = img.reshape(3, 2, 4, 2, 3).astype(float).mean(axis=(1, 3))
    assert np.all(np.abs(out.astype(float) - expected) <= 0.5 + 1e-9)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 255))
def test_area_resize_preserves_constant(w, h, v):
    img = np.full((17, 23, 3), v, dtype=np.uint8)
    assert np.all(area_resize(img, (w, h)) == v)


def test_pad_to_square_edge_replication():
    img = np.arange(6, dtype=np.uint8).reshape(2, 3, 1)
    out = pad_to_square(img)
    assert out.shape == (3, 3, 1)
    assert np.array_equal(out[2], img[1])


def test_png_round_trip(tmp_path, rng):
    img = random_rgba(rng, 9, 5, opaque=False)
    write_image(tmp_path / "x.png", img)
    assert np.array_equal(read_image(tmp_path / "x.png"), img)
