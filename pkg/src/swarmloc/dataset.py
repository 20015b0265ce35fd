"""Manifests, crop libraries and evaluation-set assembly.

A manifest is a JSON Lines file with one object per frame, plus a sibling
``<stem>.meta.json`` holding dataset-level metadata.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .crops import RobotCrop, retighten
from .exceptions import (
    ConfigurationError,
    InvalidArgumentError,
    ManifestParseError,
    ManifestValidationError,
)
from .imaging import BBox, read_image, tight_bbox

logger = logging.getLogger(__name__)

_FRAME_KEYS = {"image", "width", "height", "seed", "robots", "decoys", "background"}


@dataclass(frozen=True)
class GroundTruthRecord:
    robot_type: str
    instance_id: str
    bbox: BBox
    orientation: float
    visibility: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.orientation < 360.0:
            raise InvalidArgumentError(f"orientation {self.orientation} outside [0, 360)")
        if not 0.0 <= self.visibility <= 1.0:
            raise InvalidArgumentError(f"visibility {self.visibility} outside [0, 1]")

    @property
    def label(self):
        return f"{self.robot_type}/{self.instance_id}"

    def to_json(self):
        return {
            "type": self.robot_type,
            "id": self.instance_id,
            "bbox": _box_values(self.bbox),
            "orientation_deg": round(float(self.orientation), 2),
            "visibility": float(self.visibility),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            robot_type=str(obj["type"]),
            instance_id=str(obj["id"]),
            bbox=BBox.from_list(obj["bbox"]),
            orientation=float(obj["orientation_deg"]),
            visibility=float(obj.get("visibility", 1.0)),
        )


def _box_values(bbox):
    return [int(v) if float(v).is_integer() else float(v) for v in bbox.as_list()]


@dataclass
class FrameRecord:
    image: str
    width: int
    height: int
    seed: int | None
    robots: list[GroundTruthRecord]
    decoys: int = 0
    background: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        obj = {
            "image": self.image,
            "width": int(self.width),
            "height": int(self.height),
            "seed": None if self.seed is None else int(self.seed),
            "robots": [r.to_json() for r in self.robots],
            "decoys": int(self.decoys),
        }
        if self.background is not None:
            obj["background"] = self.background
        obj.update(self.extra)
        return obj

    @classmethod
    def from_json(cls, obj):
        return cls(
            image=str(obj["image"]),
            width=int(obj["width"]),
            height=int(obj["height"]),
            seed=None if obj.get("seed") is None else int(obj["seed"]),
            robots=[GroundTruthRecord.from_json(r) for r in obj.get("robots", [])],
            decoys=int(obj.get("decoys", 0)),
            background=obj.get("background"),
            extra={k: v for k, v in obj.items() if k not in _FRAME_KEYS},
        )

    def stratum_value(self, key):
        if key == "type":
            return "+".join(sorted({r.robot_type for r in self.robots}))
        if key == "instance":
            return "+".join(sorted({r.label for r in self.robots}))
        if key == "background":
            return self.background
        if key in self.extra:
            return self.extra[key]
        raise InvalidArgumentError(f"unknown stratum key {key!r}")


def count_values(frames):
    """Usage counts per balancing-key value, recomputed from frame records."""
    backgrounds = Counter(f.background for f in frames if f.background is not None)
    types = Counter(r.robot_type for f in frames for r in f.robots)
    instances = Counter(r.label for f in frames for r in f.robots)
    return {
        "background": dict(sorted(backgrounds.items())),
        "type": dict(sorted(types.items())),
        "instance": dict(sorted(instances.items())),
    }


@dataclass
class DatasetManifest:
    frames: list[FrameRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        self.meta.setdefault("counts", count_values(self.frames))

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.frames == other.frames and self.meta == other.meta

    def recount(self):
        return count_values(self.frames)

    def image_path(self, frame):
        path = Path(frame.image)
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path


def meta_path(path):
    path = Path(path)
    return path.with_name(path.name.split(".")[0] + ".meta.json")


def _atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(manifest, path):
    lines = [json.dumps(f.to_json(), separators=(",", ":")) for f in manifest.frames]
    meta = dict(manifest.meta)
    meta["counts"] = manifest.recount()
    _atomic_write_text(meta_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_manifest(path, validate=False):
    path = Path(path)
    frames = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frames.append(FrameRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestParseError(str(exc), line=lineno) from exc
    mpath = meta_path(path)
    meta = json.loads(mpath.read_text(encoding="utf-8")) if mpath.exists() else {}
    manifest = DatasetManifest(frames=frames, meta=meta, root=path.parent)
    if validate:
        validate_manifest(manifest)
    return manifest


def validate_manifest(manifest):
    """Check image files and the counts metadata; raise listing every bad frame."""
    bad = []
    for index, frame in enumerate(manifest.frames):
        image_path = manifest.image_path(frame)
        if not image_path.exists():
            bad.append((index, frame.image, "missing image"))
            continue
        with PILImage.open(image_path) as im:
            if im.size != (frame.width, frame.height):
                bad.append((index, frame.image, f"size {im.size} != declared "
                                                  f"{(frame.width, frame.height)}"))
        for robot in frame.robots:
            if robot.bbox.clip(frame.width, frame.height) != robot.bbox:
                bad.append((index, frame.image, f"bbox {robot.bbox.as_list()} outside frame"))
    if bad:
        detail = "; ".join(f"frame {i} ({name}): {why}" for i, name, why in bad)
        raise ManifestValidationError(f"{len(bad)} invalid frame(s): {detail}", frames=bad)
    stored = manifest.meta.get("counts")
    if stored is not None and stored != manifest.recount():
        raise ManifestValidationError("counts metadata does not match the frame records")


def load_crop_library(root_dir):
    """Index ``<root>/<type>/<id>/*.png`` RGBA crops as ``{type: {id: [RobotCrop]}}``."""
    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigurationError(f"crop library {root} is not a directory")
    library = {}
    for path in sorted(root.rglob("*")):
        if path.is_dir() or path.name.startswith("."):
            continue
        rel = path.relative_to(root)
        if path.suffix.lower() != ".png" or len(rel.parts) != 3:
            raise ConfigurationError(
                f"{path}: crop files must be laid out as <type>/<id>/<frame>.png"
            )
        with PILImage.open(path) as im:
            if im.mode != "RGBA":
                raise ConfigurationError(f"{path}: crop must be RGBA, found mode {im.mode}")
        image = read_image(path, "RGBA")
        try:
            box = tight_bbox(image)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: crop is fully transparent") from exc
        if (box.width, box.height) != (image.shape[1], image.shape[0]):
            warnings.warn(f"{path}: transparent border removed", stacklevel=2)
            image = retighten(image)
        robot_type, instance_id = rel.parts[0], rel.parts[1]
        library.setdefault(robot_type, {}).setdefault(instance_id, []).append(
            RobotCrop(image=image, robot_type=robot_type, instance_id=instance_id,
                      source_frame=path.stem, method="file")
        )
    if not library:
        raise ConfigurationError(f"crop library {root} is empty")
    return library


def save_crop(crop, root_dir, frame_number):
    from .imaging import write_image

    path = Path(root_dir) / crop.robot_type / crop.instance_id / f"{int(frame_number):06d}.png"
    write_image(path, crop.image)
    return path


def library_size(library):
    return sum(len(crops) for ids in library.values() for crops in ids.values())


def split_eval_set(manifest, strata, per_stratum, seed=0, return_remainder=False):
    """Deterministic stratified subset with exactly ``per_stratum`` frames per stratum."""
    if per_stratum < 0:
        raise InvalidArgumentError("per_stratum must be >= 0")
    groups = {}
    for index, frame in enumerate(manifest.frames):
        key = tuple(str(frame.stratum_value(k)) for k in strata)
        groups.setdefault(key, []).append(index)
    rng = np.random.default_rng(seed)
    chosen = set()
    for key in sorted(groups):
        members = groups[key]
        if len(members) < per_stratum:
            raise InvalidArgumentError(
                f"stratum {dict(zip(strata, key))} has {len(members)} frames, "
                f"needs {per_stratum}"
            )
        picks = rng.permutation(len(members))[:per_stratum]
        chosen.update(members[i] for i in picks)

    def subset(indices):
        frames = [manifest.frames[i] for i in indices]
        meta = {k: v for k, v in manifest.meta.items() if k != "counts"}
        return DatasetManifest(frames=frames, meta=meta, root=manifest.root)

    selected = subset(sorted(chosen))
    if return_remainder:
        rest = subset([i for i in range(len(manifest.frames)) if i not in chosen])
        return selected, rest
    return selected
