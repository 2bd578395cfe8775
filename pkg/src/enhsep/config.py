"""Pipeline configuration: YAML file plus dotted-path overrides."""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml

from .masks import MASK_KINDS
from .score import METRICS

STAGES = ("simulate", "enhance", "score")
BEAMFORMERS = ("mvdr", "mpdr", "wpd")

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "stages": list(STAGES),
    "io": {"input_manifest": None, "output_dir": "exp"},
    "simulate": {
        "num_utts": 10,
        "num_speakers": 2,
        "duration": 4.0,
        "fs": 16000,
        "room": [6.0, 5.0, 3.0],
        "t60": 0.0,
        "max_order": -1,
        "num_mics": 2,
        "mic_spacing": 0.1,
        "ref_channel": 0,
        "source_distance": [1.0, 2.0],
        "sir": 0.0,
        "noise": "none",
        "snr": 10.0,
        "speed_perturb": [],
        "encoding": "float32",
    },
    "stft": {"n_fft": 512, "hop": 128, "window": "hann", "center": True},
    "enhance": {"chain": ["mask:IRM"], "ref_channel": 0, "encoding": "float32"},
    "score": {
        "metrics": ["si_snr", "snr", "sdr", "sir", "sar", "stoi"],
        "filter_len": 512,
        "trim": False,
        "estimates": "enhanced",
    },
}

STEP_DEFAULTS = {
    "wpe": {"taps": 10, "delay": 3, "iterations": 3},
    "mask": {"kind": "IRM", "clip": 10.0},
    "mvdr": {},
    "mpdr": {},
    "wpd": {"delay": 3, "taps": 5},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config path {dotted!r}")
    node[keys[-1]] = value


def parse_overrides(args: Iterable[str]) -> List[Tuple[str, Any]]:
    """Turn ``--a.b=1`` / ``--a.b 1`` tokens into (path, value) pairs."""
    args = list(args)
    out = []
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith("--") or len(token) <= 2:
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"missing value for {token}")
            i += 1
            raw = args[i]
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {key}: {exc}") from exc
        out.append((key.replace("-", "_"), value))
        i += 1
    return out


def normalize_step(step: Any) -> Dict[str, Any]:
    """Chain entries may be 'mask:IBM', 'mvdr' or {'wpd': {...}}."""
    if isinstance(step, str):
        name, _, arg = step.partition(":")
        params: Dict[str, Any] = {}
        if arg:
            if name != "mask":
                raise ConfigError(f"step {step!r} takes no inline argument")
            params["kind"] = arg
    elif isinstance(step, dict) and len(step) == 1:
        name, params = next(iter(step.items()))
        params = dict(params or {})
    else:
        raise ConfigError(f"cannot parse chain step {step!r}")
    if name not in STEP_DEFAULTS:
        raise ConfigError(f"unknown enhancement step {name!r}")
    unknown = set(params) - set(STEP_DEFAULTS[name])
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    merged = dict(STEP_DEFAULTS[name], **params)
    if name == "mask" and merged["kind"] not in MASK_KINDS:
        raise ConfigError(f"unknown mask kind {merged['kind']!r}")
    return {"name": name, **merged}


def validate_chain(chain: List[Any]) -> List[Dict[str, Any]]:
    if not chain:
        raise ConfigError("enhance chain must not be empty")
    steps = [normalize_step(s) for s in chain]
    # grammar: wpe* [mask] [beamformer]
    names = [s["name"] for s in steps]
    i = 0
    while i < len(names) and names[i] == "wpe":
        i += 1
    if i < len(names) and names[i] == "mask":
        i += 1
    if i < len(names) and names[i] in BEAMFORMERS:
        i += 1
    if i != len(names):
        raise ConfigError(
            f"invalid chain {names}: expected any number of wpe steps, "
            "then at most one mask step, then at most one beamformer"
        )
    return steps


def validate(cfg: dict, stages: Optional[Iterable[str]] = None) -> dict:
    stages = list(stages if stages is not None else cfg["stages"])
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}")
    if "enhance" in stages:
        validate_chain(cfg["enhance"]["chain"])
    metrics = cfg["score"]["metrics"]
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    if cfg["score"]["estimates"] not in ("enhanced", "mixture"):
        raise ConfigError("score.estimates must be 'enhanced' or 'mixture'")
    sim = cfg["simulate"]
    if sim["noise"] not in ("none", "white", "point"):
        raise ConfigError("simulate.noise must be none, white or point")
    if sim["num_speakers"] < 1 or sim["num_mics"] < 1 or sim["num_utts"] < 0:
        raise ConfigError("simulate counts must be positive")
    if not 0 <= sim["ref_channel"] < sim["num_mics"]:
        raise ConfigError("simulate.ref_channel out of range")
    return cfg


def load_config(path: Optional[str] = None, overrides: Iterable[Tuple[str, Any]] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a mapping")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for key, value in overrides:
        set_path(cfg, key, value)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
