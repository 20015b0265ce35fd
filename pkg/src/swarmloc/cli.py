"""Command line entry point: ``swarmloc <command> ...``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import importlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, synthetic
from .augment import flip_augment, ssd_random_crop
from .backends import ReferenceDetector, SizePrior, TemplateMatcher, priors_from_library
from .bench import format_bench, parse_range, parse_resolution, run_bench
from .compositor import CompositionSpec, _write_png_atomic, balance_report, frame_seed, generate_dataset
from .config import effective_threads, load_config, read_layer
from .crops import (
    CropExtractor,
    align_crop,
    background_subtract_mask,
    extract_crop,
    refine_mask,
)
from .dataset import (
    DatasetManifest,
    FrameRecord,
    load_crop_library,
    read_manifest,
    save_crop,
    write_manifest,
)
from .evaluation import evaluate_files, write_results
from .exceptions import ConfigurationError, InvalidArgumentError, SwarmlocError
from .imaging import read_image, read_mask, write_image
from .pipeline import CameraModel, PipelineConfig, downsample, run_stream

logger = logging.getLogger("swarmloc")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
BACKENDS = ("reference", "external")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and not p.name.startswith("."))


def _config(args, overrides=None, layers=()):
    extra = {}
    if getattr(args, "seed", None) is not None:
        extra["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        extra["threads"] = args.threads
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            value = {k: v for k, v in value.items() if v is not None}
            if value:
                extra[key] = value
        elif value is not None:
            extra[key] = value
    return load_config(args.config, overrides=extra, layers=layers)


# extract-crops

def cmd_extract_crops(args):
    cfg = _config(args, {"extract": {"threshold": args.threshold, "open_radius": args.open_radius,
                                     "close_radius": args.close_radius}})["extract"]
    paths = list_images(args.frames_dir)
    if not paths:
        raise ConfigurationError(f"no frames found in {args.frames_dir}")
    if args.background:
        background = read_image(args.background, "RGB")
        extractor = CropExtractor(args.type, args.id, cfg["threshold"], cfg["open_radius"],
                                  cfg["close_radius"], args.orientation).fit(background)
        mask_for = lambda frame: refine_mask(
            background_subtract_mask(frame, extractor.background_, extractor.threshold),
            extractor.open_radius, extractor.close_radius)
        method = "automatic"
    else:
        shared = read_mask(args.mask)
        mask_for = lambda frame: shared
        method = "manual"

    written, failures = 0, []
    for index, path in enumerate(paths):
        try:
            frame = read_image(path, "RGB")
            crop = extract_crop(frame, mask_for(frame), args.type, args.id, path.name, method)
            if args.orientation:
                crop = align_crop(crop, args.orientation)
            save_crop(crop, args.out_dir, index)
            written += 1
        except (SwarmlocError, ValueError) as exc:
            failures.append((path, exc))
    for path, exc in failures:
        print(f"frame {path}: {exc}", file=sys.stderr)
    print(f"extracted {written} crop(s) to {Path(args.out_dir) / args.type / args.id}, "
          f"{len(failures)} failure(s)")
    return EXIT_FAILURE if failures else EXIT_OK


# compose

def _background_sources(value):
    if not value:
        raise ConfigurationError("composition needs at least one background source")
    if isinstance(value, (str, Path)):
        value = [value]
    if isinstance(value, list):
        value = {Path(v).name: v for v in value}
    sources = {}
    for name, entry in value.items():
        entries = entry if isinstance(entry, list) else [entry]
        files = []
        for e in entries:
            p = Path(e)
            files.extend(list_images(p) if p.is_dir() else [p])
        for f in files:
            if not f.exists():
                raise ConfigurationError(f"background image {f} not found")
        sources[str(name)] = [str(f) for f in files]
    return sources


def _decoy_library(value):
    if not value:
        return []
    if value == "synthetic":
        return synthetic.make_decoys()
    return [read_image(p, "RGBA") for p in list_images(value)]


def _crop_library(value):
    if not value:
        raise ConfigurationError("no crop library configured")
    if value == "synthetic":
        return synthetic.robot_library()
    return load_crop_library(value)


def build_spec(cfg):
    c = cfg["compose"]
    return CompositionSpec(
        backgrounds=_background_sources(c["backgrounds"]),
        crops=_crop_library(c["crops"]),
        frames=int(c["frames"]),
        robots_per_frame=tuple(int(v) for v in c["robots_per_frame"]),
        scale_range=tuple(float(v) for v in c["scale_range"]),
        seed=int(cfg["seed"]),
        balance=tuple(c["balance"]),
        decoys_per_frame=int(c["decoys_per_frame"]),
        decoys=_decoy_library(c["decoys"]),
        rotate=bool(c["rotate"]),
        allow_occlusion=bool(c["allow_occlusion"]),
        min_separation=int(c["min_separation"]),
        min_on_canvas=float(c["min_on_canvas"]),
    ).validate()


def cmd_compose(args):
    cfg = _config(args, {"compose": {"frames": args.frames, "decoys_per_frame": args.eval_decoys}},
                  layers=[read_layer(args.spec_file, "compose")])
    spec = build_spec(cfg)
    manifest = generate_dataset(spec, args.out_dir, threads=effective_threads(cfg))
    counts, spread = balance_report(manifest)
    print(f"wrote {len(manifest)} frames to {args.out_dir}")
    for key in ("background", "type", "instance"):
        values = ", ".join(f"{k}={v}" for k, v in counts[key].items())
        print(f"  {key:<10} spread {spread[key]}  ({values})")
    return EXIT_OK


# augment

def cmd_augment(args):
    cfg = _config(args, {"augment": {"hflip_prob": args.hflip_prob, "vflip_prob": args.vflip_prob,
                                     "ssd_crop": args.ssd_crop}})
    aug, seed = cfg["augment"], int(cfg["seed"])
    source = read_manifest(args.manifest, validate=True)
    out = Path(args.out_dir)
    frames = []
    for index, record in enumerate(source.frames):
        rng = np.random.default_rng(frame_seed(seed, index))
        image = read_image(source.image_path(record), "RGB")
        gt = list(record.robots)
        if rng.random() < float(aug["hflip_prob"]):
            image, gt = flip_augment(image, gt, "horizontal")
        if rng.random() < float(aug["vflip_prob"]):
            image, gt = flip_augment(image, gt, "vertical")
        crop_seed = int(rng.integers(2**63))
        if aug["ssd_crop"] and gt:
            image, gt = ssd_random_crop(image, gt, crop_seed)
        name = f"frames/{index:06d}.png"
        _write_png_atomic(out / name, image)
        frames.append(FrameRecord(name, image.shape[1], image.shape[0], record.seed, gt,
                                  record.decoys, record.background, dict(record.extra)))
    meta = {k: v for k, v in source.meta.items() if k != "counts"}
    meta["augment_seed"] = seed
    write_manifest(DatasetManifest(frames=frames, meta=meta, root=out), out / "manifest.jsonl")
    print(f"wrote {len(frames)} augmented frames to {out}")
    return EXIT_OK


# run-pipeline

def _input_frames(path):
    """``(first frame size or None, lazy frame iterator)`` for a manifest or a folder."""
    path = Path(path)
    if path.is_dir():
        paths = list_images(path)
    elif path.exists():
        manifest = read_manifest(path)
        paths = [manifest.image_path(f) for f in manifest.frames]
    else:
        raise ConfigurationError(f"input {path} does not exist")
    size = None
    if paths:
        first = read_image(paths[0], "RGB")
        size = (first.shape[1], first.shape[0])
    return size, (read_image(p, "RGB") for p in paths)


def pipeline_config(cfg):
    p = cfg["pipeline"]
    return PipelineConfig(
        stage1_resolution=tuple(int(v) for v in p["stage1_resolution"]),
        stage2_input=int(p["stage2_input"]),
        rotation_step_deg=float(p["rotation_step_deg"]),
        camera=CameraModel.from_dict(p["camera"]) if p["camera"] else None,
        threads=effective_threads(cfg),
    ).validate()


def reference_backends(cfg, frame_size):
    """Reference detector and per-type template matchers from the configuration."""
    p = cfg["pipeline"]
    library = _crop_library(p["templates"])
    w1, h1 = (int(v) for v in p["stage1_resolution"])
    downscale = frame_size[0] / w1 if frame_size else 1.0
    if p["priors"]:
        priors = {t: SizePrior.from_dict(v) for t, v in p["priors"].items()}
    else:
        priors = priors_from_library(library, downscale, tuple(p["scale_range"]))
    background = None
    if p["background"]:
        background = downsample(read_image(p["background"], "RGB"), (w1, h1))
    detector = ReferenceDetector(priors, int(p["threshold"]), int(p["open_radius"]),
                                 int(p["close_radius"])).fit(background)
    missing = sorted(set(priors) - set(library))
    if missing:
        raise ConfigurationError(f"no templates for detected type(s) {missing}")
    matchers = {
        t: TemplateMatcher(float(p["rotation_step_deg"]), int(p["match_size"])).fit(
            {i: crops for i, crops in ids.items() if crops})
        for t, ids in library.items()
    }
    return detector, matchers


def external_backends(cfg):
    target = cfg["pipeline"]["external"]
    if not target or ":" not in str(target):
        raise ConfigurationError("pipeline.external must name a factory as 'module:function'")
    module, _, attr = str(target).partition(":")
    try:
        factory = getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot load backend factory {target!r}: {exc}") from exc
    detector, backends = factory(cfg)
    return detector, backends


def cmd_run_pipeline(args):
    cfg = _config(args, {"pipeline": {"backend": args.backend}})
    backend = cfg["pipeline"]["backend"]
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}; available: {', '.join(BACKENDS)}")
    config = pipeline_config(cfg)
    size, frames = _input_frames(args.input)
    if backend == "reference":
        detector, backends = reference_backends(cfg, size)
    else:
        detector, backends = external_backends(cfg)
    count = 0

    def counted(stream):
        nonlocal count
        for item in stream:
            count += 1
            yield item

    write_results(args.results, counted(run_stream(frames, detector, backends, config)))
    print(f"wrote results for {count} frame(s) to {args.results}")
    return EXIT_OK


# evaluate

def cmd_evaluate(args):
    cfg = _config(args, {"evaluate": {"iou": args.iou}})
    manifest = read_manifest(args.gt_manifest)
    report = evaluate_files(manifest, args.results, float(cfg["evaluate"]["iou"]))
    print(report.table())
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


# bench

def cmd_bench(args):
    cfg = _config(args, {"bench": {"resolutions": args.resolutions, "robots": args.robots,
                                   "runs": args.runs}})
    b = cfg["bench"]
    res = b["resolutions"]
    res = res.split(",") if isinstance(res, str) else res
    resolutions = [parse_resolution(r) for r in res]
    robots = parse_range(b["robots"])
    runs = int(b["runs"])
    if runs < 1:
        raise ConfigurationError("runs must be >= 1")
    report = run_bench(resolutions, robots, runs, seed=int(cfg["seed"]),
                       stage2_input=int(cfg["pipeline"]["stage2_input"]))
    print(format_bench(report))
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


# make-demo

def cmd_make_demo(args):
    """Synthetic crop library, decoys, backgrounds and ready-to-use config files."""
    out = Path(args.out_dir)
    for robot_type, ids in synthetic.robot_library().items():
        for instance_id, crops in ids.items():
            for n, crop in enumerate(crops):
                save_crop(crop, out / "crops", n)
    for n, decoy in enumerate(synthetic.make_decoys()):
        write_image(out / "decoys" / f"decoy{n}.png", decoy)
    w, h = args.width, args.height
    for name, color in (("grey", (120, 125, 130)), ("floor", (60, 90, 60))):
        write_image(out / "backgrounds" / name / "000000.png",
                    synthetic.plain_background(w, h, color))
    spec = {
        "backgrounds": ["backgrounds/grey", "backgrounds/floor"],
        "crops": "crops",
        "decoys": "decoys",
        "frames": 200,
        "scale_range": [0.8, 1.2],
        "decoys_per_frame": 3,
        "allow_occlusion": False,
        "min_separation": 12,
        "min_on_canvas": 1.0,
    }
    (out / "compose.yaml").write_text(_yaml(spec))
    pipeline = {"pipeline": {"templates": "crops", "scale_range": [0.8, 1.2],
                             "stage1_resolution": [w // 2, h // 2]}}
    (out / "pipeline.yaml").write_text(_yaml(pipeline))
    print(f"demo assets written to {out}")
    return EXIT_OK


def _yaml(obj):
    import yaml

    return yaml.safe_dump(obj, sort_keys=False)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON configuration file")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="swarmloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-crops", parents=[common], help="cut robot crops out of frames")
    p.add_argument("frames_dir")
    p.add_argument("out_dir", help="crop library root; crops go to <out>/<type>/<id>/")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--background", help="empty-scene image (automatic mode)")
    mode.add_argument("--mask", help="0/255 mask shared by all frames (manual mode)")
    p.add_argument("--type", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--orientation", type=float, default=0.0,
                   help="robot heading in the frames, degrees; crops are rotated back to 0")
    p.add_argument("--threshold", type=int)
    p.add_argument("--open-radius", type=int)
    p.add_argument("--close-radius", type=int)
    p.set_defaults(func=cmd_extract_crops)

    p = sub.add_parser("compose", parents=[common], help="synthesize a labeled dataset")
    p.add_argument("spec_file")
    p.add_argument("out_dir")
    p.add_argument("--frames", type=int)
    p.add_argument("--eval-decoys", type=int, metavar="K", help="decoys per frame")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("augment", parents=[common], help="flip and SSD-crop a dataset")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--hflip-prob", type=float)
    p.add_argument("--vflip-prob", type=float)
    p.add_argument("--ssd-crop", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("run-pipeline", parents=[common], help="localize robots in frames")
    p.add_argument("input", help="manifest.jsonl or a folder of images")
    p.add_argument("results", help="output JSON Lines file")
    p.add_argument("--backend", choices=BACKENDS)
    p.set_defaults(func=cmd_run_pipeline)

    p = sub.add_parser("evaluate", parents=[common], help="score results against ground truth")
    p.add_argument("gt_manifest")
    p.add_argument("results")
    p.add_argument("--iou", type=float)
    p.add_argument("--report", help="write the report as JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", parents=[common], help="time both pipeline stages")
    p.add_argument("--resolutions", help="comma separated WxH list")
    p.add_argument("--robots", help="robot counts, e.g. 1..10 or 1,2,4")
    p.add_argument("--runs", type=int)
    p.add_argument("--json", help="write the report as JSON here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-demo", parents=[common], help="write synthetic demo assets")
    p.add_argument("out_dir")
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--height", type=int, default=600)
    p.set_defaults(func=cmd_make_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"swarmloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SwarmlocError, OSError, ValueError) as exc:
        print(f"swarmloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
