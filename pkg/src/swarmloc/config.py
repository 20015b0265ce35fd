"""Layered run configuration: built-in defaults, config file, environment, flags.

Environment variables ``SWARMLOC_<SECTION>__<KEY>`` (or ``SWARMLOC_<KEY>`` for
top-level keys) override file values; values are parsed as YAML scalars or
flow collections, so ``SWARMLOC_PIPELINE__STAGE1_RESOLUTION="[200, 150]"``
works.
"""
from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .exceptions import ConfigurationError

ENV_PREFIX = "SWARMLOC_"

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "extract": {"threshold": 25, "open_radius": 1, "close_radius": 2},
    "compose": {
        "backgrounds": None,
        "crops": None,
        "decoys": None,
        "frames": 1,
        "robots_per_frame": [1, 4],
        "scale_range": [0.5, 1.5],
        "balance": ["background", "type", "instance"],
        "decoys_per_frame": 0,
        "rotate": True,
        "allow_occlusion": True,
        "min_separation": 0,
        "min_on_canvas": 0.5,
    },
    "augment": {"hflip_prob": 0.5, "vflip_prob": 0.5, "ssd_crop": True},
    "pipeline": {
        "backend": "reference",
        "stage1_resolution": [400, 300],
        "stage2_input": 128,
        "rotation_step_deg": 1.0,
        "camera": None,
        "templates": None,
        "background": None,
        "priors": None,
        "scale_range": [0.5, 1.5],
        "threshold": 25,
        "open_radius": 1,
        "close_radius": 2,
        "match_size": 64,
        "external": None,
    },
    "evaluate": {"iou": 0.5},
    "bench": {
        "resolutions": ["200x150", "400x300", "800x600"],
        "robots": "1..10",
        "runs": 100,
    },
}

# sections whose values are free-form mappings
_OPEN_KEYS = {("pipeline", "camera"), ("pipeline", "priors"), ("compose", "backgrounds")}


def deep_merge(base, override, path=()):
    """Merge ``override`` into a copy of ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = ".".join(path + (str(key),))
        if key not in out:
            raise ConfigurationError(f"unknown configuration key {where!r}")
        if isinstance(out[key], dict) and path + (key,) not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where!r} must be a mapping")
            out[key] = deep_merge(out[key], value, path + (key,))
        else:
            out[key] = value
    return out


def read_config_file(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def env_overrides(environ=None):
    """Nested override mapping from ``SWARMLOC_*`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{name}: {exc}") from exc
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def resolve_paths(section, keys, base_dir):
    """Make relative path values in ``section`` relative to ``base_dir``."""
    base = Path(base_dir)

    def fix(v):
        if v is None or v == "synthetic":
            return v
        p = Path(v).expanduser()
        return str(p if p.is_absolute() else base / p)

    for key in keys:
        value = section.get(key)
        if isinstance(value, dict):
            section[key] = {k: [fix(x) for x in v] if isinstance(v, list) else fix(v)
                            for k, v in value.items()}
        elif isinstance(value, list):
            section[key] = [fix(v) for v in value]
        elif isinstance(value, str):
            section[key] = fix(value)
    return section


_PATH_KEYS = (("compose", ("backgrounds", "crops", "decoys")),
              ("pipeline", ("templates", "background")))


def read_layer(path, section=None):
    """A config file as an override layer, relative paths resolved against its folder.

    With ``section`` set, a file without that top-level key is taken to be the
    section itself (a bare composition spec, for instance).
    """
    data = read_config_file(path)
    if section is not None and section not in data:
        data = {section: data}
    base = Path(path).resolve().parent
    for name, keys in _PATH_KEYS:
        if isinstance(data.get(name), dict):
            resolve_paths(data[name], keys, base)
    return data


def load_config(path=None, environ=None, overrides=None, layers=()):
    """Defaults, the optional file, extra ``layers``, environment, then ``overrides``."""
    config = copy.deepcopy(DEFAULTS)
    if path is not None:
        config = deep_merge(config, read_layer(path))
    for layer in layers:
        config = deep_merge(config, layer)
    config = deep_merge(config, env_overrides(environ))
    if overrides:
        config = deep_merge(config, overrides)
    return config


def effective_threads(config):
    threads = config.get("threads")
    if threads is None:
        return os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return threads
