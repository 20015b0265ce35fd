import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from swarmloc.crops import (
    CropExtractor,
    RobotCrop,
    align_crop,
    background_subtract_mask,
    disc,
    extract_crop,
    largest_component,
    manual_crop_sequence,
    refine_mask,
)
from swarmloc.exceptions import ExtractionFailedError, InvalidArgumentError
from swarmloc.imaging import alpha_composite, tight_bbox, transform_rgba
from swarmloc.synthetic import random_blob_crop


def brute_erode(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r]
    for y in range(h):
        for x in range(w):
            ok = True
            for dy, dx in offsets:
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx]:
                    ok = False
                    break
            out[y, x] = ok
    return out


def brute_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy <= r * r]
    for y in range(h):
        for x in range(w):
            out[y, x] = any(0 <= y + dy < h and 0 <= x + dx < w and mask[y + dy, x + dx]
                            for dy, dx in offsets)
    return out


def brute_refine(mask, ro, rc):
    out = mask.copy()
    if ro:
        out = brute_dilate(brute_erode(out, ro), ro)
    if rc:
        out = brute_erode(brute_dilate(out, rc), rc)
    return out


def test_identical_frames_give_empty_mask(rng):
    frame = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    assert not background_subtract_mask(frame, frame.copy()).any()


def test_white_patch_on_black():
    bg = np.zeros((40, 40, 3), dtype=np.uint8)
    frame = bg.copy()
    frame[5:15, 20:30] = 255
    mask = background_subtract_mask(frame, bg, 30)
    expected = np.zeros((40, 40), dtype=bool)
    expected[5:15, 20:30] = True
    assert np.array_equal(mask, expected)


def test_threshold_is_strict_and_uses_max_channel():
    bg = np.zeros((1, 3, 3), dtype=np.uint8)
    frame = np.array([[[25, 0, 0], [0, 26, 0], [10, 10, 10]]], dtype=np.uint8)
    assert background_subtract_mask(frame, bg, 25).tolist() == [[False, True, False]]


def test_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        background_subtract_mask(np.zeros((4, 4, 3), np.uint8), np.zeros((4, 5, 3), np.uint8))


def test_pasted_crop_mask_iou(rng):
    bg = np.full((120, 160, 3), (90, 110, 70), dtype=np.uint8)
    crop = random_blob_crop(rng, 40, 60)
    frame = alpha_composite(bg, crop, (50, 30))
    truth = np.zeros((120, 160), dtype=bool)
    h, w = crop.shape[:2]
    truth[30:30 + h, 50:50 + w] = crop[..., 3] > 0
    mask = background_subtract_mask(frame, bg, 25)
    iou = (mask & truth).sum() / (mask | truth).sum()
    # blob colors are random, so a few pixels may sit within the threshold of the floor
    if np.abs(crop[..., :3].astype(int) - bg[0, 0]).max(axis=2)[crop[..., 3] > 0].min() > 25:
        assert iou >= 0.98


def test_zero_radii_identity(rng):
    m = rng.random((30, 30)) < 0.4
    assert np.array_equal(refine_mask(m, 0, 0), m)


def test_speckle_removed():
    m = np.zeros((11, 11), dtype=bool)
    m[5, 5] = True
    assert not refine_mask(m, 1, 0).any()


def test_hole_filled_square_kept():
    m = np.zeros((30, 30), dtype=bool)
    m[5:25, 5:25] = True
    holed = m.copy()
    holed[14, 12] = False
    out = refine_mask(holed, 0, 1)
    assert np.array_equal(out, m)
    assert np.array_equal(out, brute_refine(holed, 0, 1))


@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(0, 3), st.floats(0.2, 0.8))
def test_refine_matches_brute_force(seed, ro, rc, density):
    m = np.random.default_rng(seed).random((14, 17)) < density
    assert np.array_equal(refine_mask(m, ro, rc), brute_refine(m, ro, rc))


@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.floats(0.2, 0.8))
def test_refine_idempotent(seed, r, density):
    m = np.random.default_rng(seed).random((40, 40)) < density
    once = refine_mask(m, r, r)
    assert np.array_equal(refine_mask(once, r, r), once)


def test_disc_shape():
    assert disc(1).sum() == 5
    assert disc(2).sum() == 13


def test_negative_radius():
    with pytest.raises(InvalidArgumentError):
        refine_mask(np.zeros((3, 3), bool), -1, 0)


def test_full_mask_crop_is_whole_frame(rng):
    frame = rng.integers(0, 256, size=(12, 9, 3), dtype=np.uint8)
    crop = extract_crop(frame, np.ones((12, 9), bool), "t", "a")
    assert np.array_equal(crop.image[..., :3], frame)
    assert (crop.image[..., 3] == 255).all()


def test_component_dimensions(rng):
    frame = rng.integers(0, 256, size=(100, 100, 3), dtype=np.uint8)
    m = np.zeros((100, 100), dtype=bool)
    m[10:50, 20:50] = True
    crop = extract_crop(frame, m, "t", "a")
    assert crop.image.shape[:2] == (40, 30)


def test_largest_component_wins():
    m = np.zeros((60, 60), dtype=bool)
    m[0:20, 0:25] = True  # 500 px
    m[40:44, 40:45] = True  # 20 px
    out = largest_component(m)
    labels, n = ndimage.label(m, structure=np.ones((3, 3)))
    sizes = ndimage.sum(m, labels, range(1, n + 1))
    assert out.sum() == max(sizes) == 500
    assert not out[40:44, 40:45].any()


def test_largest_component_tie_goes_to_first_in_raster_order():
    m = np.zeros((10, 10), dtype=bool)
    m[6:8, 0:2] = True
    m[1:3, 7:9] = True
    out = largest_component(m)
    assert out[1, 7] and not out[6, 0]


def test_eight_connectivity():
    m = np.zeros((5, 5), dtype=bool)
    m[0, 0] = m[1, 1] = m[2, 2] = True
    assert largest_component(m).sum() == 3


def test_empty_mask_names_frame(rng):
    frame = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    with pytest.raises(ExtractionFailedError) as info:
        extract_crop(frame, np.zeros((8, 8), bool), "t", "a", frame_id=17)
    assert info.value.frame == 17
    assert "17" in str(info.value)


@given(st.integers(0, 2**32 - 1))
def test_no_transparent_border(seed):
    rng = np.random.default_rng(seed)
    frame = rng.integers(0, 256, size=(30, 30, 3), dtype=np.uint8)
    m = rng.random((30, 30)) < 0.3
    if not m.any():
        m[3, 3] = True
    alpha = extract_crop(frame, m, "t", "a").image[..., 3] > 0
    assert alpha[0].any() and alpha[-1].any() and alpha[:, 0].any() and alpha[:, -1].any()


def test_manual_sequence(rng):
    frames = [rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8) for _ in range(10)]
    mask = np.zeros((30, 40), dtype=bool)
    mask[5:20, 8:30] = True
    crops = manual_crop_sequence(frames, mask, "t", "a")
    assert len(crops) == 10
    assert len({c.image.shape for c in crops}) == 1
    single = extract_crop(frames[0], mask, "t", "a", frame_id=0, method="manual")
    assert np.array_equal(crops[0].image, single.image)
    assert all(c.method == "manual" for c in crops)


def test_manual_sequence_changes_only_inside_mask(rng):
    base = rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8)
    mask = np.zeros((30, 40), dtype=bool)
    mask[5:20, 8:30] = True
    mask[10, 8] = False
    frames = []
    for color in ((255, 0, 0), (0, 255, 0), (0, 0, 255)):
        f = base.copy()
        f[12:14, 15:17] = color  # an LED inside the mask
        frames.append(f)
    crops = manual_crop_sequence(frames, mask, "t", "a")
    alpha = crops[0].image[..., 3] > 0
    for c in crops[1:]:
        diff = (c.image != crops[0].image).any(axis=2)
        assert diff.any() and not (diff & ~alpha).any()


def test_manual_sequence_failure_has_index(rng):
    frames = [rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8),
              rng.integers(0, 256, size=(12, 10, 3), dtype=np.uint8)]
    mask = np.ones((10, 10), dtype=bool)
    with pytest.raises(ExtractionFailedError) as info:
        manual_crop_sequence(frames, mask, "t", "a")
    assert info.value.frame == 1


def _crop(rng):
    return RobotCrop(random_blob_crop(rng, 30, 50), "t", "a")


def test_align_zero_is_identity(rng):
    crop = _crop(rng)
    out = align_crop(crop, 0.0)
    assert np.array_equal(out.image, crop.image)
    assert out.canonical_orientation == 0.0


def test_align_ninety_swaps(rng):
    crop = _crop(rng)
    h, w = crop.image.shape[:2]
    assert align_crop(crop, 90.0).image.shape[:2] == (w, h)


def test_align_composition(rng):
    crop = _crop(rng)
    once = align_crop(crop, 45.0)
    twice = align_crop(align_crop(crop, 45.0), 0.0)
    assert once.image.shape == twice.image.shape
    both = (once.image[..., 3] == 255) & (twice.image[..., 3] == 255)
    err = np.abs(once.image[..., :3].astype(int) - twice.image[..., :3].astype(int))[both]
    assert err.mean() <= 2


def test_align_undoes_rotation(rng):
    crop = _crop(rng)
    rotated = RobotCrop(transform_rgba(crop.image, 1.0, 30.0), "t", "a")
    back = align_crop(rotated, 30.0).image
    h, w = crop.image.shape[:2]
    assert abs(back.shape[0] - h) <= 2 and abs(back.shape[1] - w) <= 2


def test_crop_extractor_estimator(rng):
    bg = np.full((80, 80, 3), 40, dtype=np.uint8)
    blob = random_blob_crop(rng, 20, 30)
    blob[..., :3] = 220
    frames = [alpha_composite(bg, blob, (10 + 5 * k, 20)) for k in range(3)]
    ext = CropExtractor(robot_type="sphero", instance_id="red").fit(bg)
    assert ext.get_params()["threshold"] == 25
    crops = ext.transform(frames)
    assert [c.robot_type for c in crops] == ["sphero"] * 3
    assert all(c.image.shape[:2] == blob.shape[:2] for c in crops)
    assert tight_bbox(crops[0].image) == tight_bbox(blob)
