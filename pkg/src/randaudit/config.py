"""Run configuration: defaults, TOML/JSON loading, dotted-key overrides.

A config is a nested dict. ``resolve`` merges a file and overrides onto the
defaults and validates the result; the resolved dict is what gets embedded in
every output file. Run-control keys (``out``, ``workers``) are kept out of it
so they cannot change output bytes.
"""

from __future__ import annotations

import copy
import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from randaudit.attacks import PgdConfig
from randaudit.experiments import CompareParams, NagParams
from randaudit.model import DatasetSpec, TrainParams
from randaudit.rng import parse_seed
from randaudit.smoothing import MODES, SmoothingConfig
from randaudit.sweep import REFERENCE_DIMS_BINS, DEFAULT_METHODS, SweepPlan


class ConfigError(ValueError):
    pass


DEFAULTS: Dict[str, Any] = {
    "seed": 7,
    "epsilon": 0.5,
    "norm": "l2",
    "data": {
        "kind": "blobs",
        "d": 32,
        "classes": 4,
        "n_per_class": 250,
        "noise": 0.25,
        "train_csv": "",
        "test_csv": "",
    },
    "model": {
        "file": "",
        "hidden": [64, 64],
        "activation": "relu",
        "gamma": 0.1,
        "tag": "",
    },
    "train": {
        "epochs": 40,
        "batch_size": 32,
        "learning_rate": 0.05,
        "momentum": 0.9,
        "noise_sigma": 0.0,
    },
    "smoothing": {
        "n": 16,
        "sigma": 0.25,
        "mode": "fixed",
        "cycle_k": 1,
        "abstain": -1.0,  # negative disables abstention
    },
    "pgd": {
        "steps": 40,
        "step_size": 0.0,  # 0 selects 2.5 * epsilon / steps
        "restarts": 1,
        "random_start": True,
    },
    "nag": {
        "points": 200,
        "inferences": 10000,
        "trial_counts": [1, 10, 100, 1000],
        "modes": ["random", "fixed"],
    },
    "smooth_compare": {
        "points": 1000,
        "n_values": [1, 2, 4, 8, 16, 32],
        "modes": ["random", "fixed"],
        "early_exit": False,
    },
    "sweep": {
        "points": 100,
        "dims_bins": [list(p) for p in REFERENCE_DIMS_BINS],
        "methods": list(DEFAULT_METHODS),
        "exhaustive": False,
        "include_clean_errors": False,
        "grid_cap": 10**8,
        "verdict_margin": 0.1,
        "smoothed": False,
    },
}


def deep_merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = deep_merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_file(path) -> dict:
    """Read a TOML or JSON config, or the ``config`` block of an output JSON."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
            return doc["config"] if "config" in doc and "meta" in doc else doc
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_override(item: str) -> dict:
    """``a.b=value`` -> nested dict; the value is parsed as a TOML value."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {item!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def resolve(file_config: Optional[dict] = None, overrides: Iterable[str] = (),
            seed: Optional[str] = None) -> dict:
    cfg = deep_merge(DEFAULTS, file_config or {})
    for item in overrides:
        cfg = deep_merge(cfg, parse_override(item))
    if seed is not None:
        cfg["seed"] = seed
    try:
        cfg["seed"] = parse_seed(cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Build every typed object once so bad values fail before any work starts."""
    try:
        dataset_spec(cfg)
        train_params(cfg)
        smoothing_config(cfg)
        pgd_config(cfg)
        nag_params(cfg)
        compare_params(cfg)
        sweep_plan(cfg)
        if cfg["model"]["activation"] not in ("relu", "kwta"):
            raise ValueError("model.activation must be relu or kwta")
        if any(int(h) < 1 for h in cfg["model"]["hidden"]):
            raise ValueError("model.hidden sizes must be positive")
        for key in ("points",):
            for section in ("nag", "smooth_compare", "sweep"):
                if int(cfg[section][key]) < 1:
                    raise ValueError(f"{section}.{key} must be >= 1")
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def dataset_spec(cfg: dict) -> DatasetSpec:
    d = cfg["data"]
    return DatasetSpec(d["kind"], int(d["d"]), int(d["classes"]), int(d["n_per_class"]),
                       float(d["noise"]))


def train_params(cfg: dict) -> TrainParams:
    t = cfg["train"]
    return TrainParams(int(t["epochs"]), int(t["batch_size"]), float(t["learning_rate"]),
                       float(t["momentum"]), float(t["noise_sigma"]))


def smoothing_config(cfg: dict, mode: Optional[str] = None, n: Optional[int] = None) -> SmoothingConfig:
    s = cfg["smoothing"]
    abstain = float(s["abstain"])
    return SmoothingConfig(int(n if n is not None else s["n"]), float(s["sigma"]),
                           mode or s["mode"], int(s["cycle_k"]),
                           abstain if abstain >= 0 else None)


def pgd_config(cfg: dict, early_exit: bool = True) -> PgdConfig:
    p = cfg["pgd"]
    step = float(p["step_size"])
    return PgdConfig(float(cfg["epsilon"]), cfg["norm"], int(p["steps"]),
                     step if step > 0 else None, int(p["restarts"]), bool(p["random_start"]),
                     early_exit)


def _modes(values) -> tuple:
    modes = tuple(str(m) for m in values)
    bad = [m for m in modes if m not in MODES]
    if bad or not modes or len(set(modes)) != len(modes):
        raise ValueError(f"modes must be distinct values from {MODES}, got {list(values)}")
    return modes


def nag_params(cfg: dict) -> NagParams:
    n = cfg["nag"]
    trials = tuple(int(t) for t in n["trial_counts"])
    if not trials or min(trials) < 1:
        raise ValueError("nag.trial_counts must be positive")
    if int(n["inferences"]) < int(cfg["smoothing"]["n"]):
        raise ValueError("nag.inferences must be >= smoothing.n")
    return NagParams(int(cfg["smoothing"]["n"]), float(cfg["smoothing"]["sigma"]),
                     int(n["inferences"]), trials, _modes(n["modes"]),
                     int(cfg["smoothing"]["cycle_k"]))


def compare_params(cfg: dict) -> CompareParams:
    c = cfg["smooth_compare"]
    n_values = tuple(int(v) for v in c["n_values"])
    if not n_values or min(n_values) < 1:
        raise ValueError("smooth_compare.n_values must be positive")
    return CompareParams(n_values, float(cfg["smoothing"]["sigma"]), _modes(c["modes"]),
                         int(cfg["smoothing"]["cycle_k"]),
                         pgd_config(cfg, early_exit=bool(c["early_exit"])))


def sweep_plan(cfg: dict) -> SweepPlan:
    s = cfg["sweep"]
    p = cfg["pgd"]
    step = float(p["step_size"])
    return SweepPlan(
        dims_bins=tuple((int(k), int(b)) for k, b in s["dims_bins"]),
        epsilon=float(cfg["epsilon"]),
        norm=cfg["norm"],
        methods=tuple(s["methods"]),
        pgd_steps=int(p["steps"]),
        pgd_step_size=step if step > 0 else None,
        pgd_random_start=bool(p["random_start"]),
        exhaustive=bool(s["exhaustive"]),
        grid_cap=int(s["grid_cap"]),
        include_clean_errors=bool(s["include_clean_errors"]),
    )
