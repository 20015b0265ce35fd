"""Latency benchmark of both pipeline stages with the reference backends.

Stage 1 is timed per detector input resolution, stage 2 per number of robots
in the frame (one crop, resample and template match per robot).
"""
from __future__ import annotations

import gc
import statistics
import time

from . import synthetic
from .backends import ReferenceDetector, TemplateMatcher
from .compositor import CompositionSpec, compose_frame
from .exceptions import ConfigurationError
from .imaging import BBox
from .pipeline import downsample, stage2_crop

DEFAULT_RESOLUTIONS = ((200, 150), (400, 300), (800, 600))
DEFAULT_ROBOTS = tuple(range(1, 11))


def parse_resolution(text):
    try:
        w, h = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"resolution must look like 400x300, got {text!r}") from exc
    if w < 1 or h < 1:
        raise ConfigurationError(f"resolution must be positive, got {text!r}")
    return w, h


def parse_range(text):
    """``"1..10"`` or ``"1,2,5"`` to a tuple of ints."""
    text = str(text)
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split(".."))
            values = tuple(range(lo, hi + 1))
        else:
            values = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"invalid robot count list {text!r}") from exc
    if not values or min(values) < 1:
        raise ConfigurationError(f"robot counts must be >= 1, got {text!r}")
    return values


def _summary(samples):
    out = {"runs": len(samples), "mean_ms": 1000.0 * statistics.fmean(samples)}
    if len(samples) > 1:
        out["std_ms"] = 1000.0 * statistics.stdev(samples)
    return out


def _time_interleaved(fns, runs):
    """Per-function samples, cycling through ``fns`` on every run so drift hits all alike."""
    for fn in fns:
        fn()  # warm-up
    samples = [[] for _ in fns]
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(runs):
            for fn, out in zip(fns, samples):
                t0 = time.perf_counter()
                fn()
                out.append(time.perf_counter() - t0)
    finally:
        if enabled:
            gc.enable()
    return samples


def bench_scene(seed=0, size=(1600, 1200), robots=4):
    """A synthetic frame plus the reference backends fitted to it."""
    library = synthetic.robot_library()
    w, h = size
    spec = CompositionSpec(
        backgrounds={"plain": [synthetic.plain_background(w, h, (120, 125, 130))]},
        crops=library, frames=1, robots_per_frame=(robots, robots), scale_range=(1.6, 2.4),
        seed=seed, allow_occlusion=False, min_separation=8, min_on_canvas=1.0,
    )
    frame, _ = compose_frame(spec, 0)
    matchers = {
        t: TemplateMatcher().fit({i: [c.image for c in crops] for i, crops in ids.items()})
        for t, ids in library.items()
    }
    return frame, library, matchers


def run_bench(resolutions=DEFAULT_RESOLUTIONS, robots=DEFAULT_ROBOTS, runs=100, seed=0,
              stage2_input=128):
    """Mean (and std, for runs > 1) latency in milliseconds for each configuration."""
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    resolutions = sorted((tuple(r) for r in resolutions), key=lambda r: (r[0] * r[1], r))
    robots = sorted(set(robots))
    frame, library, matchers = bench_scene(seed)
    full_w = frame.shape[1]

    stage1_fns = []
    for w, h in resolutions:
        small = downsample(frame, (w, h))
        detector = ReferenceDetector(priors=synthetic.default_priors(full_w / (2 * w))).fit(None)
        stage1_fns.append(lambda d=detector, img=small: d.predict(img))

    # one crop per robot, cycling through every type and pattern of the library
    crops = []
    for t in sorted(library):
        for i in sorted(library[t]):
            crops.append((t, library[t][i][0].image[..., :3].copy()))

    def second_stage(batch):
        for robot_type, image in batch:
            h, w = image.shape[:2]
            crop = stage2_crop(image, BBox(0, 0, w, h), stage2_input)
            matchers[robot_type].predict(crop, robot_type)

    stage2_fns = [lambda b=[crops[j % len(crops)] for j in range(k)]: second_stage(b)
                  for k in robots]

    samples = _time_interleaved(stage1_fns + stage2_fns, runs)
    stage1 = [dict(resolution=f"{w}x{h}", **_summary(s))
              for (w, h), s in zip(resolutions, samples[:len(stage1_fns)])]
    stage2 = [dict(robots=k, **_summary(s)) for k, s in zip(robots, samples[len(stage1_fns):])]
    return {"stage1": stage1, "stage2": stage2, "runs": runs}


def is_monotone(rows):
    means = [r["mean_ms"] for r in rows]
    return all(a <= b for a, b in zip(means, means[1:]))


def format_bench(report):
    def cell(row):
        std = f" +/- {row['std_ms']:.2f}" if "std_ms" in row else ""
        return f"{row['mean_ms']:9.2f}{std} ms"

    lines = ["stage 1 (reference detector)", f"  {'resolution':<12} latency"]
    lines += [f"  {r['resolution']:<12} {cell(r)}" for r in report["stage1"]]
    lines += ["stage 2 (template matcher)", f"  {'robots':<12} latency"]
    lines += [f"  {r['robots']:<12} {cell(r)}" for r in report["stage2"]]
    return "\n".join(lines)
