"""Whole-framework evaluation of pipeline results against a ground-truth manifest.

Detection AP is computed twice: per robot type (is it a copter, and where) and
per ``type/id`` class (is it *this* copter). Identification accuracy and the
orientation error are taken over type-level true positives only.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConsistencyError, ManifestParseError
from .imaging import BBox
from .metrics import (
    MatchResult,
    average_precision,
    identification_accuracy,
    match_detections,
    mean_ap,
    orientation_mae,
    wrong_run_lengths,
)


@dataclass(frozen=True)
class Prediction:
    robot_type: str
    instance_id: str
    bbox: BBox
    orientation: float
    confidence: float = 1.0

    @property
    def label(self):
        return f"{self.robot_type}/{self.instance_id}"

    @classmethod
    def from_json(cls, obj):
        return cls(
            robot_type=str(obj["type"]),
            instance_id=str(obj["id"]),
            bbox=BBox.from_list(obj["bbox"]),
            orientation=float(obj.get("orientation_deg", 0.0)) % 360.0,
            confidence=float(obj.get("confidence", 1.0)),
        )


def write_results(path, stream):
    """Write ``(frame_index, [TrackedRobot])`` pairs as one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for index, robots in stream:
            fh.write(json.dumps({"frame": int(index), "robots": [r.to_json() for r in robots]}))
            fh.write("\n")
    tmp.replace(path)
    return path


def read_results(path):
    """``{frame_index: [Prediction]}`` from a results JSON Lines file."""
    results = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                index = int(obj["frame"])
                preds = [Prediction.from_json(r) for r in obj.get("robots", [])]
            except (ValueError, KeyError, TypeError) as exc:
                raise ManifestParseError(f"{path}: {exc}", line=lineno) from exc
            if index in results:
                raise ManifestParseError(f"{path}: duplicate frame {index}", line=lineno)
            results[index] = preds
    return results


@dataclass
class EvalReport:
    per_class_ap: dict
    map: float
    per_instance_ap: dict
    instance_map: float
    id_accuracy: float | None
    orientation_mae: float | None
    run_lengths: dict
    iou_threshold: float = 0.5
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "iou_threshold": self.iou_threshold,
            "per_class_ap": self.per_class_ap,
            "map": self.map,
            "per_instance_ap": self.per_instance_ap,
            "instance_map": self.instance_map,
            "id_accuracy": self.id_accuracy,
            "orientation_mae_deg": self.orientation_mae,
            "run_lengths": {str(k): v for k, v in self.run_lengths.items()},
            "counts": self.counts,
        }

    def table(self):
        pct = lambda v: "   n/a" if v is None else f"{100 * v:6.1f}"
        lines = [f"{'class':<20} {'AP@' + format(self.iou_threshold, 'g'):>8}"]
        for name, ap in self.per_class_ap.items():
            lines.append(f"{name:<20} {pct(ap):>8}")
        lines.append(f"{'mAP (type)':<20} {pct(self.map):>8}")
        for name, ap in self.per_instance_ap.items():
            lines.append(f"{name:<20} {pct(ap):>8}")
        lines.append(f"{'mAP (instance)':<20} {pct(self.instance_map):>8}")
        lines.append(f"{'id accuracy':<20} {pct(self.id_accuracy):>8}")
        mae = "n/a" if self.orientation_mae is None else f"{self.orientation_mae:.2f} deg"
        lines.append(f"{'orientation MAE':<20} {mae:>8}")
        runs = ", ".join(f"{k}:{v}" for k, v in self.run_lengths.items()) or "none"
        lines.append(f"{'wrong runs':<20} {runs}")
        return "\n".join(lines)


def check_frames(n_frames, results):
    """Raise if the results do not cover exactly frames ``0..n_frames-1``."""
    expected = set(range(n_frames))
    got = set(results)
    missing, extra = sorted(expected - got), sorted(got - expected)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"frames missing from results: {missing}")
        if extra:
            parts.append(f"frames not in ground truth: {extra}")
        raise ConsistencyError("; ".join(parts))


def _match_by(key, gt_frames, results, iou_threshold):
    """Per-class MatchResults plus, per frame, the TP pairing for each class."""
    classes = sorted({key(g) for frame in gt_frames for g in frame})
    merged = {c: MatchResult() for c in classes}
    pairs = []
    for index, gts in enumerate(gt_frames):
        preds = results[index]
        frame_pairs = []
        for c in classes:
            g_idx = [j for j, g in enumerate(gts) if key(g) == c]
            p_idx = [i for i, p in enumerate(preds) if key(p) == c]
            m = match_detections([(preds[i].bbox, preds[i].confidence) for i in p_idx],
                                 [gts[j].bbox for j in g_idx], iou_threshold)
            merged[c].extend(m)
            for k, hit in zip(p_idx, m.matched):
                if hit is not None:
                    frame_pairs.append((preds[k], g_idx[hit]))
        pairs.append(frame_pairs)
    return merged, pairs


def evaluate(gt_frames, results, iou_threshold=0.5):
    """Score predictions against ground truth.

    ``gt_frames`` is a list (frame order) of GroundTruthRecord lists and
    ``results`` maps frame index to Prediction lists. Predicted classes absent
    from the ground truth have no AP of their own; their boxes are ignored.
    """
    gt_frames = [list(f) for f in gt_frames]
    check_frames(len(gt_frames), results)

    by_type, type_pairs = _match_by(lambda r: r.robot_type, gt_frames, results, iou_threshold)
    by_label, _ = _match_by(lambda r: r.label, gt_frames, results, iou_threshold)
    per_type = {c: average_precision(m) for c, m in by_type.items()}
    per_label = {c: average_precision(m) for c, m in by_label.items()}

    ids, angles = [], []
    streams = defaultdict(list)
    for index, gts in enumerate(gt_frames):
        hits = {j: p for p, j in type_pairs[index]}
        for j, g in enumerate(gts):
            p = hits.get(j)
            if p is not None:
                ids.append((p.instance_id, g.instance_id))
                angles.append((p.orientation, g.orientation))
            streams[g.label].append(p is not None and p.instance_id == g.instance_id)

    return EvalReport(
        per_class_ap=per_type,
        map=mean_ap(per_type) if per_type else 0.0,
        per_instance_ap=per_label,
        instance_map=mean_ap(per_label) if per_label else 0.0,
        id_accuracy=identification_accuracy(ids) if ids else None,
        orientation_mae=orientation_mae(angles) if angles else None,
        run_lengths=wrong_run_lengths(dict(sorted(streams.items()))),
        iou_threshold=iou_threshold,
        counts={
            "frames": len(gt_frames),
            "ground_truth": sum(len(f) for f in gt_frames),
            "predictions": sum(len(v) for v in results.values()),
            "type_true_positives": len(ids),
        },
    )


def evaluate_files(manifest, results_path, iou_threshold=0.5):
    """Evaluate a results file against a DatasetManifest (frames matched by position)."""
    return evaluate([f.robots for f in manifest.frames], read_results(results_path), iou_threshold)
