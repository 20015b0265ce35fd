import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from swarmloc.dataset import (
    DatasetManifest,
    FrameRecord,
    GroundTruthRecord,
    library_size,
    load_crop_library,
    meta_path,
    read_manifest,
    save_crop,
    split_eval_set,
    write_manifest,
)
from swarmloc.crops import RobotCrop
from swarmloc.exceptions import (
    ConfigurationError,
    InvalidArgumentError,
    ManifestParseError,
    ManifestValidationError,
)
from swarmloc.imaging import BBox, write_image


def record(t="a", i="1", box=(0, 0, 4, 4), theta=0.0, vis=1.0):
    return GroundTruthRecord(t, i, BBox(*box), theta, vis)


def frame(name, robots, bg="plain", w=10, h=8, **extra):
    return FrameRecord(name, w, h, 1, robots, 0, bg, extra)


robots = st.lists(
    st.builds(
        lambda t, i, x, y, w, h, th, v: record(t, i, (x, y, x + w, y + h), th, v),
        st.sampled_from(["copter", "sphero"]), st.sampled_from(["A", "B"]),
        st.integers(0, 50), st.integers(0, 50), st.integers(1, 20), st.integers(1, 20),
        st.integers(0, 35999).map(lambda v: v / 100), st.floats(0, 1).map(lambda v: round(v, 6)),
    ),
    max_size=4,
)


@given(st.lists(robots, max_size=6), st.integers(0, 2**63))
def test_round_trip_property(tmp_path_factory, frames, seed):
    path = tmp_path_factory.mktemp("m") / "manifest.jsonl"
    m = DatasetManifest(
        frames=[FrameRecord(f"frames/{k:06d}.png", 100, 90, seed, r, k % 3, "bg", {"lighting": "x"})
                for k, r in enumerate(frames)],
        meta={"seed": 3, "spec_hash": "abc", "created": None},
    )
    write_manifest(m, path)
    assert read_manifest(path) == m


def test_schema_on_disk(tmp_path):
    m = DatasetManifest(frames=[frame("f.png", [record("copter", "A", (1, 2, 3, 4), 12.345)])])
    write_manifest(m, tmp_path / "manifest.jsonl")
    obj = json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[0])
    assert set(obj) >= {"image", "width", "height", "seed", "robots", "decoys"}
    assert obj["robots"][0] == {"type": "copter", "id": "A", "bbox": [1, 2, 3, 4],
                                "orientation_deg": 12.35, "visibility": 1.0}
    assert meta_path(tmp_path / "manifest.jsonl").name == "manifest.meta.json"


def test_counts_recomputed(tmp_path):
    m = DatasetManifest(frames=[frame("0.png", [record("typeA")]),
                                frame("1.png", [record("typeB"), record("typeB", "2")])])
    assert m.meta["counts"]["type"] == {"typeA": 1, "typeB": 2}
    write_manifest(m, tmp_path / "m.jsonl")
    meta = json.loads(meta_path(tmp_path / "m.jsonl").read_text())
    assert meta["counts"]["type"] == {"typeA": 1, "typeB": 2}


def test_parse_error_line_number(tmp_path):
    path = tmp_path / "m.jsonl"
    good = json.dumps(frame("0.png", []).to_json())
    path.write_text(good + "\n" + "{not json\n")
    with pytest.raises(ManifestParseError) as info:
        read_manifest(path)
    assert info.value.line == 2


def test_validation_names_missing_frame(tmp_path):
    write_image(tmp_path / "ok.png", np.zeros((8, 10, 3), np.uint8))
    m = DatasetManifest(frames=[frame("ok.png", []), frame("gone.png", [])])
    write_manifest(m, tmp_path / "m.jsonl")
    with pytest.raises(ManifestValidationError) as info:
        read_manifest(tmp_path / "m.jsonl", validate=True)
    assert "gone.png" in str(info.value)
    assert [f[1] for f in info.value.frames] == ["gone.png"]


def test_validation_checks_size_and_counts(tmp_path):
    write_image(tmp_path / "a.png", np.zeros((8, 11, 3), np.uint8))
    write_manifest(DatasetManifest(frames=[frame("a.png", [])]), tmp_path / "m.jsonl")
    with pytest.raises(ManifestValidationError):
        read_manifest(tmp_path / "m.jsonl", validate=True)
    write_image(tmp_path / "a.png", np.zeros((8, 10, 3), np.uint8))
    write_manifest(DatasetManifest(frames=[frame("a.png", [record()])]), tmp_path / "m.jsonl")
    meta = meta_path(tmp_path / "m.jsonl")
    data = json.loads(meta.read_text())
    data["counts"]["type"] = {"a": 5}
    meta.write_text(json.dumps(data))
    with pytest.raises(ManifestValidationError):
        read_manifest(tmp_path / "m.jsonl", validate=True)


def _rgba(color):
    img = np.zeros((6, 5, 4), dtype=np.uint8)
    img[..., :3] = color
    img[..., 3] = 255
    return img


def test_crop_library_counts(tmp_path):
    for t in ("copter", "sphero", "youbot"):
        for i in ("A", "B"):
            for n in range(5):
                save_crop(RobotCrop(_rgba((n, 0, 0)), t, i), tmp_path, n)
    lib = load_crop_library(tmp_path)
    assert library_size(lib) == 30
    assert sorted(lib) == ["copter", "sphero", "youbot"]


def test_crop_library_rejects_rgb(tmp_path):
    save_crop(RobotCrop(_rgba((1, 2, 3)), "t", "a"), tmp_path, 0)
    write_image(tmp_path / "t" / "a" / "bad.png", np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(ConfigurationError, match="bad.png"):
        load_crop_library(tmp_path)


def test_crop_library_layout_and_empty(tmp_path):
    with pytest.raises(ConfigurationError):
        load_crop_library(tmp_path)
    write_image(tmp_path / "loose.png", _rgba((1, 1, 1)))
    with pytest.raises(ConfigurationError, match="layout|<type>"):
        load_crop_library(tmp_path)


def test_crop_library_retightens(tmp_path):
    img = np.zeros((10, 10, 4), dtype=np.uint8)
    img[2:7, 3:8] = 200
    write_image(tmp_path / "t" / "a" / "000000.png", img)
    with pytest.warns(UserWarning):
        lib = load_crop_library(tmp_path)
    assert lib["t"]["a"][0].image.shape == (5, 5, 4)


def _strat_manifest():
    frames = []
    for k in range(300):
        frames.append(frame(f"{k}.png", [record("sphero", "red" if k % 2 else "green")],
                            lighting="natural" if k % 3 else "artificial"))
    return DatasetManifest(frames=frames)


def test_split_exact_per_stratum():
    m = _strat_manifest()
    sub = split_eval_set(m, ["instance"], 110, seed=4)
    assert len(sub) == 220
    labels = [f.stratum_value("instance") for f in sub.frames]
    assert labels.count("sphero/red") == labels.count("sphero/green") == 110


def test_split_zero_and_deterministic():
    m = _strat_manifest()
    assert len(split_eval_set(m, ["instance"], 0)) == 0
    a = split_eval_set(m, ["instance", "lighting"], 20, seed=9)
    b = split_eval_set(m, ["instance", "lighting"], 20, seed=9)
    assert a == b and len(a) == 80


def test_split_insufficient_names_stratum():
    with pytest.raises(InvalidArgumentError, match="lighting"):
        split_eval_set(_strat_manifest(), ["lighting"], 150)


@given(st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_split_disjoint_complete(per, seed):
    m = _strat_manifest()
    sel, rest = split_eval_set(m, ["instance", "lighting"], per, seed, return_remainder=True)
    names = [f.image for f in sel.frames] + [f.image for f in rest.frames]
    assert len(names) == len(set(names)) == len(m)
