"""Cut-and-paste frame synthesis with exact ground truth.

Each frame draws its randomness from a generator seeded by
``(spec.seed, frame_index)`` only, so frames can be produced in any order or in
parallel. Balancing of backgrounds, robot types and identification patterns is
decided up front by a dataset-level plan.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crops import _dilate, retighten
from .dataset import DatasetManifest, FrameRecord, GroundTruthRecord, write_manifest
from .exceptions import ConfigurationError, PlacementInfeasibleError
from .imaging import alpha_composite, check_image, read_image, tight_bbox, transform_rgba, write_image

logger = logging.getLogger(__name__)

BALANCE_KEYS = ("background", "type", "instance")
_PLACEMENT_TRIES = 200


@dataclass
class CompositionSpec:
    """Everything needed to synthesize a dataset.

    ``backgrounds`` maps a source name to a list of RGB arrays or image paths;
    ``crops`` is a crop library ``{type: {id: [RobotCrop]}}``; ``decoys`` is a
    list of RGBA arrays.
    """

    backgrounds: dict
    crops: dict
    frames: int = 1
    robots_per_frame: tuple = (1, 4)
    scale_range: tuple = (0.5, 1.5)
    seed: int = 0
    balance: tuple = BALANCE_KEYS
    decoys_per_frame: int = 0
    decoys: list = field(default_factory=list)
    rotate: bool = True
    allow_occlusion: bool = True
    min_separation: int = 0
    min_on_canvas: float = 0.5

    def validate(self):
        if not self.backgrounds or not any(len(v) for v in self.backgrounds.values()):
            raise ConfigurationError("composition needs at least one background")
        if any(len(v) == 0 for v in self.backgrounds.values()):
            empty = [k for k, v in self.backgrounds.items() if len(v) == 0]
            raise ConfigurationError(f"background sources without images: {empty}")
        if not self.crops or not any(c for ids in self.crops.values() for c in ids.values()):
            raise ConfigurationError("crop library is empty")
        lo, hi = self.robots_per_frame
        if lo < 1 or hi < lo:
            raise ConfigurationError(f"invalid robots_per_frame {self.robots_per_frame}")
        slo, shi = self.scale_range
        if not (0 < slo <= shi):
            raise ConfigurationError(f"invalid scale_range {self.scale_range}")
        if self.frames < 1:
            raise ConfigurationError("frame count must be >= 1")
        if self.decoys_per_frame < 0:
            raise ConfigurationError("decoys_per_frame must be >= 0")
        if self.decoys_per_frame and not len(self.decoys):
            raise ConfigurationError("decoys requested but the decoy library is empty")
        unknown = set(self.balance) - set(BALANCE_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown balancing keys {sorted(unknown)}")
        return self

    def digest(self):
        """Stable hash over parameters and every input pixel."""
        h = hashlib.sha256()
        params = {
            "frames": self.frames,
            "robots_per_frame": list(self.robots_per_frame),
            "scale_range": [float(v) for v in self.scale_range],
            "seed": int(self.seed),
            "balance": list(self.balance),
            "decoys_per_frame": self.decoys_per_frame,
            "rotate": self.rotate,
            "allow_occlusion": self.allow_occlusion,
            "min_separation": self.min_separation,
            "min_on_canvas": self.min_on_canvas,
        }
        h.update(json.dumps(params, sort_keys=True).encode())
        for source in sorted(self.backgrounds):
            h.update(source.encode())
            for bg in self.backgrounds[source]:
                h.update(str(bg).encode() if isinstance(bg, (str, Path)) else
                         np.ascontiguousarray(bg).tobytes())
        for robot_type in sorted(self.crops):
            for instance_id in sorted(self.crops[robot_type]):
                h.update(f"{robot_type}/{instance_id}".encode())
                for crop in self.crops[robot_type][instance_id]:
                    h.update(np.ascontiguousarray(crop.image).tobytes())
        for decoy in self.decoys:
            h.update(np.ascontiguousarray(decoy).tobytes())
        return h.hexdigest()


def frame_seed(seed, frame_index):
    """64-bit per-frame seed mixed from the dataset seed and the frame index."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(frame_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _frame_rng(seed, frame_index):
    return np.random.default_rng(frame_seed(seed, frame_index))


@dataclass
class CompositionPlan:
    robot_counts: list
    backgrounds: list
    placements: list  # per frame: list of (robot_type, instance_id)


def make_plan(spec):
    """Robot counts, background sources and robot identities for every frame."""
    spec.validate()
    lo, hi = spec.robots_per_frame
    counts = [int(_frame_rng(spec.seed, i).integers(lo, hi + 1)) for i in range(spec.frames)]
    plan_rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed) & (2**64 - 1), 2**32]))

    sources = sorted(spec.backgrounds)
    if "background" in spec.balance:
        bg = [sources[i % len(sources)] for i in range(spec.frames)]
        bg = [bg[i] for i in plan_rng.permutation(spec.frames)]
    else:
        bg = [sources[i] for i in plan_rng.integers(0, len(sources), spec.frames)]

    total = sum(counts)
    types = sorted(t for t, ids in spec.crops.items() if any(ids.values()))
    if "type" in spec.balance:
        seq = [types[k % len(types)] for k in range(total)]
        seq = [seq[i] for i in plan_rng.permutation(total)]
    else:
        seq = [types[i] for i in plan_rng.integers(0, len(types), total)]
    seen = {}
    identities = []
    for robot_type in seq:
        ids = sorted(i for i, crops in spec.crops[robot_type].items() if crops)
        if "instance" in spec.balance:
            j = seen.get(robot_type, 0)
            seen[robot_type] = j + 1
            identities.append((robot_type, ids[j % len(ids)]))
        else:
            identities.append((robot_type, ids[int(plan_rng.integers(len(ids)))]))

    placements, offset = [], 0
    for n in counts:
        placements.append(identities[offset:offset + n])
        offset += n
    return CompositionPlan(counts, bg, placements)


def _load_background(item):
    if isinstance(item, (str, Path)):
        return read_image(item, "RGB")
    return check_image(item, 3, "background").copy()


def _window_sum(integral, x, y, w, h, width, height):
    """Sum of a footprint's integral image over the part that lands on-canvas."""
    x0, y0 = max(0, -x), max(0, -y)
    x1, y1 = min(w, width - x), min(h, height - y)
    if x0 >= x1 or y0 >= y1:
        return 0
    return int(integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0])


def _integral(footprint):
    out = np.zeros((footprint.shape[0] + 1, footprint.shape[1] + 1), dtype=np.int64)
    out[1:, 1:] = footprint.cumsum(0).cumsum(1)
    return out


def _place_footprint(footprint, x, y, width, height):
    full = np.zeros((height, width), dtype=bool)
    h, w = footprint.shape
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, width), min(y + h, height)
    if x0 < x1 and y0 < y1:
        full[y0:y1, x0:x1] = footprint[y0 - y:y1 - y, x0 - x:x1 - x]
    return full


def _random_pose(rng, scale_range, rotate):
    theta = round(float(rng.uniform(0.0, 360.0)), 2) % 360.0 if rotate else 0.0
    lo, hi = scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return theta, scale


def compose_frame(spec, frame_index, plan=None, return_footprints=False):
    """Synthesize frame ``frame_index``; returns ``(image, ground_truth)``.

    With ``return_footprints`` a third element lists the on-canvas alpha
    footprint of every pasted robot, in paste order.
    """
    if plan is None:
        plan = make_plan(spec)
    rng = _frame_rng(spec.seed, frame_index)
    rng.integers(spec.robots_per_frame[0], spec.robots_per_frame[1] + 1)  # consumed by the plan

    source = plan.backgrounds[frame_index]
    pool = spec.backgrounds[source]
    frame = _load_background(pool[int(rng.integers(len(pool)))])
    height, width = frame.shape[:2]

    owner = np.full((height, width), -1, dtype=np.int32)
    blocked = np.zeros((height, width), dtype=bool)
    footprints, poses = [], []
    for robot_type, instance_id in plan.placements[frame_index]:
        crops = spec.crops[robot_type][instance_id]
        crop = crops[int(rng.integers(len(crops)))]
        theta, scale = _random_pose(rng, spec.scale_range, spec.rotate)
        pasted = retighten(transform_rgba(crop.image, scale, theta))
        fp = pasted[..., 3] > 0
        h, w = fp.shape
        integral = _integral(fp)
        total = int(integral[-1, -1])
        need = spec.min_on_canvas * total

        position = None
        for _ in range(_PLACEMENT_TRIES):
            x = int(rng.integers(-w + 1, width))
            y = int(rng.integers(-h + 1, height))
            if _window_sum(integral, x, y, w, h, width, height) < need:
                continue
            if not spec.allow_occlusion:
                placed = _place_footprint(fp, x, y, width, height)
                if (placed & blocked).any():
                    continue
            position = (x, y)
            break
        if position is None:
            if not spec.allow_occlusion:
                raise PlacementInfeasibleError(
                    f"frame {frame_index}: no free position for {robot_type}/{instance_id}"
                )
            position = ((width - w) // 2, (height - h) // 2)

        x, y = position
        frame = alpha_composite(frame, pasted, position)
        placed = _place_footprint(fp, x, y, width, height)
        owner[placed] = len(footprints)
        footprints.append(placed)
        poses.append((robot_type, instance_id, theta))
        if not spec.allow_occlusion:
            blocked |= _dilate(placed, spec.min_separation) if spec.min_separation else placed

    records = []
    for index, ((robot_type, instance_id, theta), fp) in enumerate(zip(poses, footprints)):
        visible = int((owner == index).sum())
        records.append(GroundTruthRecord(
            robot_type=robot_type,
            instance_id=instance_id,
            bbox=tight_bbox(fp),
            orientation=theta,
            visibility=visible / int(fp.sum()),
        ))

    if spec.decoys_per_frame:
        robot_mask = owner >= 0
        if spec.min_separation:
            robot_mask = _dilate(robot_mask, spec.min_separation)
        frame = inject_decoys(frame, records, spec.decoys, spec.decoys_per_frame,
                              seed=int(rng.integers(2**63)), robot_mask=robot_mask,
                              scale_range=spec.scale_range)
    if return_footprints:
        return frame, records, footprints
    return frame, records


def inject_decoys(frame, gt, decoy_library, count, seed, robot_mask=None,
                  scale_range=(0.5, 1.5), max_tries=_PLACEMENT_TRIES, return_footprints=False):
    """Paste ``count`` decoys that overlap no robot pixel.

    Without ``robot_mask`` the ground-truth boxes stand in for the robot
    footprints, which is conservative.
    """
    frame = check_image(frame, 3, "frame")
    if count <= 0:
        return (frame.copy(), []) if return_footprints else frame.copy()
    if not len(decoy_library):
        raise ConfigurationError("decoy library is empty")
    height, width = frame.shape[:2]
    if robot_mask is None:
        robot_mask = np.zeros((height, width), dtype=bool)
        for record in gt:
            b = record.bbox.rounded()
            robot_mask[b.y_min:b.y_max, b.x_min:b.x_max] = True
    rng = np.random.default_rng(seed)
    out = frame.copy()
    footprints = []
    for n in range(count):
        for _ in range(max_tries):
            decoy = decoy_library[int(rng.integers(len(decoy_library)))]
            theta, scale = _random_pose(rng, scale_range, True)
            pasted = retighten(transform_rgba(check_image(decoy, 4, "decoy"), scale, theta))
            h, w = pasted.shape[:2]
            if w > width or h > height:
                continue
            x = int(rng.integers(0, width - w + 1))
            y = int(rng.integers(0, height - h + 1))
            fp = pasted[..., 3] > 0
            if (robot_mask[y:y + h, x:x + w] & fp).any():
                continue
            out = alpha_composite(out, pasted, (x, y))
            footprints.append(_place_footprint(fp, x, y, width, height))
            break
        else:
            raise PlacementInfeasibleError(
                f"could not place decoy {n + 1} of {count} without touching a robot"
            )
    return (out, footprints) if return_footprints else out


def _write_png_atomic(path, image):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=".png")
    os.close(fd)
    try:
        write_image(tmp, image)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def generate_dataset(spec, output_dir, threads=1, created=None):
    """Write ``spec.frames`` frames plus ``manifest.jsonl`` under ``output_dir``."""
    plan = make_plan(spec)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def build(index):
        try:
            image, records = compose_frame(spec, index, plan)
            name = f"frames/{index:06d}.png"
            _write_png_atomic(out / name, image)
        except OSError as exc:
            raise OSError(f"frame {index}: {exc}") from exc
        return FrameRecord(
            image=name,
            width=image.shape[1],
            height=image.shape[0],
            seed=frame_seed(spec.seed, index),
            robots=records,
            decoys=spec.decoys_per_frame,
            background=plan.backgrounds[index],
        )

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(build, range(spec.frames)))
    else:
        frames = [build(i) for i in range(spec.frames)]

    meta = {"spec_hash": spec.digest(), "seed": int(spec.seed), "created": created}
    manifest = DatasetManifest(frames=frames, meta=meta, root=out)
    write_manifest(manifest, out / "manifest.jsonl")
    logger.info("wrote %d frames to %s", len(frames), out)
    return manifest


def balance_report(manifest):
    """Per-key ``max - min`` usage spread; instances are compared within their type."""
    counts = manifest.recount()
    spread = {}
    for key in ("background", "type"):
        values = list(counts[key].values())
        spread[key] = (max(values) - min(values)) if values else 0
    per_type = {}
    for label, n in counts["instance"].items():
        per_type.setdefault(label.split("/", 1)[0], []).append(n)
    spread["instance"] = max((max(v) - min(v) for v in per_type.values()), default=0)
    return counts, spread

