"""Two-stage localization: typed detection on a downsampled frame, then
per-type identification and orientation on high-resolution crops.

Backends are duck-typed: a detector has ``predict(image) -> [Detection]`` and a
second stage backend ``predict(crop, robot_type) -> PoseEstimate``.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, ConsistencyError, InvalidArgumentError
from .imaging import BBox, area_resize, check_image, pad_to_square

N_BINS = 360


@dataclass(frozen=True)
class Detection:
    robot_type: str
    bbox: BBox
    confidence: float
    height_override_m: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PoseEstimate:
    instance_id: str
    orientation: float
    id_confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.orientation < 360.0:
            raise InvalidArgumentError(f"orientation {self.orientation} outside [0, 360)")

    @property
    def bin(self):
        return bin_orientation(self.orientation)


@dataclass
class TrackedRobot:
    robot_type: str
    instance_id: str
    bbox: BBox
    orientation: float
    frame_index: int
    confidence: float = 1.0
    id_confidence: float = 1.0
    position_3d: tuple | None = None

    def to_json(self):
        obj = {
            "type": self.robot_type,
            "id": self.instance_id,
            "bbox": [int(v) if float(v).is_integer() else float(v) for v in self.bbox.as_list()],
            "orientation_deg": round(float(self.orientation), 2),
            "confidence": round(float(self.confidence), 6),
        }
        if self.position_3d is not None:
            obj["position_m"] = [round(float(v), 4) for v in self.position_3d]
        return obj


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera looking straight down from ``height_m`` above the floor."""

    fx: float
    fy: float
    cx: float
    cy: float
    height_m: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0 and self.height_m > 0):
            raise InvalidArgumentError("fx, fy and height_m must be positive")

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   float(d["height_m"]))


class DetectorBackend(Protocol):
    def predict(self, image) -> list[Detection]: ...


class SecondStageBackend(Protocol):
    def predict(self, crop, robot_type) -> PoseEstimate: ...


@dataclass
class PipelineConfig:
    stage1_resolution: tuple = (400, 300)
    stage2_input: int = 128
    rotation_step_deg: float = 1.0
    camera: CameraModel | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self):
        w, h = self.stage1_resolution
        if w < 1 or h < 1:
            raise ConfigurationError(f"invalid stage1_resolution {self.stage1_resolution}")
        if self.stage2_input < 1:
            raise ConfigurationError(f"invalid stage2_input {self.stage2_input}")
        if not self.rotation_step_deg > 0:
            raise ConfigurationError("rotation_step_deg must be positive")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        camera = d.pop("camera", None)
        return cls(
            stage1_resolution=tuple(int(v) for v in d.pop("stage1_resolution", (400, 300))),
            stage2_input=int(d.pop("stage2_input", 128)),
            rotation_step_deg=float(d.pop("rotation_step_deg", 1.0)),
            camera=CameraModel.from_dict(camera) if camera else None,
            threads=int(d.pop("threads", 1) or 1),
            extra=d,
        ).validate()


def downsample(frame, target):
    """Area-averaging resample to ``target = (width, height)``."""
    return area_resize(frame, target)


def bin_orientation(theta):
    if not math.isfinite(theta):
        raise InvalidArgumentError(f"orientation must be finite, got {theta}")
    return int(math.floor(theta % 360.0)) % N_BINS


def bin_center(index):
    if not 0 <= index < N_BINS:
        raise InvalidArgumentError(f"bin {index} outside 0..{N_BINS - 1}")
    return index + 0.5


def project_to_ground(pixel, camera, height_m=None):
    """Floor-plane coordinates (meters) of a pixel for a downward-looking camera."""
    u, v = pixel
    h = camera.height_m if height_m is None else height_m
    return h * (u - camera.cx) / camera.fx, h * (v - camera.cy) / camera.fy


def rescale_bbox(bbox, sx, sy, width, height):
    box = bbox.scale(sx, sy).rounded()
    clipped = box.clip(width, height)
    if clipped is None:
        raise ConsistencyError(f"detection {bbox.as_list()} falls outside the frame")
    return clipped


def stage2_crop(frame, bbox, size):
    """Exact bbox crop, squared by edge replication and resized to ``size``."""
    b = bbox.rounded()
    crop = frame[b.y_min:b.y_max, b.x_min:b.x_max]
    return area_resize(pad_to_square(crop), (size, size))


def merge_outputs(detections, poses, frame_index=0, camera=None):
    """Combine index-aligned stage 1 and stage 2 outputs."""
    if len(detections) != len(poses):
        raise ConsistencyError(
            f"{len(detections)} detections but {len(poses)} pose estimates"
        )
    robots = []
    for det, pose in zip(detections, poses):
        position = None
        if camera is not None:
            cx, cy = det.bbox.center
            distance = det.height_override_m
            x, y = project_to_ground((cx, cy), camera, distance)
            z = 0.0 if distance is None else camera.height_m - distance
            position = (x, y, z)
        robots.append(TrackedRobot(
            robot_type=det.robot_type,
            instance_id=pose.instance_id,
            bbox=det.bbox,
            orientation=pose.orientation,
            frame_index=frame_index,
            confidence=det.confidence,
            id_confidence=pose.id_confidence,
            position_3d=position,
        ))
    return robots


def run_two_stage(frame, detector, backends, config=None, frame_index=0):
    """Localize every robot in ``frame``; returns TrackedRobots in detection order."""
    config = (config or PipelineConfig()).validate()
    frame = check_image(frame, 3, "frame")
    height, width = frame.shape[:2]
    small = downsample(frame, config.stage1_resolution)
    sx = width / config.stage1_resolution[0]
    sy = height / config.stage1_resolution[1]

    detections = []
    for det in detector.predict(small):
        if det.robot_type not in backends:
            raise ConfigurationError(f"no second stage backend for type {det.robot_type!r}")
        detections.append(Detection(
            robot_type=det.robot_type,
            bbox=rescale_bbox(det.bbox, sx, sy, width, height),
            confidence=det.confidence,
            height_override_m=det.height_override_m,
        ))
    if not detections:
        return []

    def second_stage(det):
        crop = stage2_crop(frame, det.bbox, config.stage2_input)
        return backends[det.robot_type].predict(crop, det.robot_type)

    if config.threads > 1 and len(detections) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            poses = list(pool.map(second_stage, detections))
    else:
        poses = [second_stage(d) for d in detections]
    return merge_outputs(detections, poses, frame_index, config.camera)


def run_stream(frames, detector, backends, config=None):
    """Yield ``(index, robots)`` per frame, in frame order.

    With ``config.threads > 1`` consecutive frames overlap; order is preserved.
    """
    config = (config or PipelineConfig()).validate()
    frames = iter(frames)
    if config.threads <= 1:
        for index, frame in enumerate(frames):
            yield index, run_two_stage(frame, detector, backends, config, index)
        return
    per_frame = PipelineConfig(config.stage1_resolution, config.stage2_input,
                               config.rotation_step_deg, config.camera, 1, config.extra)
    window = 2 * config.threads  # bounds the number of frames held in memory
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        pending = deque()
        for index, frame in enumerate(frames):
            pending.append(pool.submit(run_two_stage, frame, detector, backends, per_frame, index))
            if len(pending) >= window:
                yield index - len(pending) + 1, pending.popleft().result()
        first = index + 1 - len(pending) if pending else 0
        for offset, fut in enumerate(pending):
            yield first + offset, fut.result()


class TwoStageLocalizer(BaseEstimator):
    """Estimator wrapper around :func:`run_two_stage`."""

    def __init__(self, detector=None, backends=None, stage1_resolution=(400, 300),
                 stage2_input=128, camera=None, threads=1):
        self.detector = detector
        self.backends = backends
        self.stage1_resolution = stage1_resolution
        self.stage2_input = stage2_input
        self.camera = camera
        self.threads = threads

    def _config(self):
        return PipelineConfig(tuple(self.stage1_resolution), self.stage2_input,
                              camera=self.camera, threads=self.threads)

    def fit(self, X=None, y=None):
        if self.detector is None or not self.backends:
            raise ConfigurationError("a detector and at least one second stage backend are required")
        self._config().validate()
        return self

    def predict(self, frames):
        """One list of TrackedRobots per frame."""
        if isinstance(frames, np.ndarray) and frames.ndim == 3:
            frames = [frames]
        return [robots for _, robots in run_stream(frames, self.detector, self.backends,
                                                   self._config())]
