"""Experiment configuration: nested YAML file, defaults, and command-line overrides.

Resolution order, lowest to highest priority: built-in defaults, the config
file, the ``FABRICTOUCH_DATA_ROOT`` environment variable (data root only),
then ``--set key.sub=value`` style overrides and explicit CLI flags.
"""

from __future__ import annotations

import copy
import os
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .dataset import SplitPolicy
from .features import ExtractionParams
from .neural.model import ModelConfig
from .train import TrainConfig

DATA_ROOT_ENV = "FABRICTOUCH_DATA_ROOT"

DEFAULTS: dict[str, Any] = {
    "data_root": "data",
    "run_dir": "runs/default",
    "cache_dir": "feature-cache",
    "seeds": [0, 1, 2, 3, 4],
    "jobs": 1,
    "features": {"image": True, "flow": False, "flow_backend": "opencv", "keep_fraction": 0.001},
    "split": {"train_tags": ["day1", "day2"], "test_tags": ["day3"], "val_per_class": 2},
    "model": {},
    "train": {},
    "synth": {
        "classes": 8, "separation": 1.0, "samples": 400, "train_trials": 12, "test_trials": 2,
        "seed": 0, "property_set": False, "native_frames": True,
    },
    "noise": {"increase_db": 20.0, "internal_attenuation": 0.3, "seed": 1000, "test_tags": ["noise"],
              "pairing": "seed"},
    "properties": {"holdout": [1, 10, 21, 22, 23]},
}


def deep_merge(base: Mapping, override: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """``"model.backbone=tcn"`` -> (["model", "backbone"], "tcn"); values are parsed as YAML scalars."""
    if "=" not in item:
        raise ValueError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ValueError(f"override {item!r} has an empty key")
    return path, yaml.safe_load(raw)


def apply_override(cfg: dict, path: list[str], value: Any) -> None:
    node = cfg
    for p in path[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {'.'.join(path)}: {p} is not a section")
    node[path[-1]] = value


class ExperimentConfig:
    """Resolved configuration with typed views for each pipeline stage."""

    def __init__(self, raw: Mapping):
        self.raw = deep_merge(DEFAULTS, raw)
        self._check_keys("model", ModelConfig)
        self._check_keys("train", TrainConfig)

    def _check_keys(self, section: str, cls) -> None:
        names = {f.name for f in fields(cls)}
        unknown = set(self.raw[section]) - names
        if unknown:
            raise ValueError(f"unknown {section} keys: {sorted(unknown)}")

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] = (),
             env: Mapping[str, str] | None = None) -> "ExperimentConfig":
        raw: dict = {}
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text())
            if loaded is not None and not isinstance(loaded, dict):
                raise ValueError(f"{path}: top level must be a mapping")
            raw = loaded or {}
        raw = deep_merge(DEFAULTS, raw)
        env = os.environ if env is None else env
        if env.get(DATA_ROOT_ENV):
            raw["data_root"] = env[DATA_ROOT_ENV]
        for item in overrides:
            apply_override(raw, *parse_override(item))
        return cls(raw)

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    def set(self, dotted: str, value: Any) -> None:
        apply_override(self.raw, dotted.split("."), value)

    @property
    def data_root(self) -> Path:
        return Path(self.raw["data_root"])

    @property
    def run_dir(self) -> Path:
        return Path(self.raw["run_dir"])

    @property
    def cache_dir(self) -> Path:
        return Path(self.raw["cache_dir"])

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    def model_config(self, **changes) -> ModelConfig:
        return ModelConfig.from_dict({**self.raw["model"], **changes})

    def train_config(self) -> TrainConfig:
        # sequences are cut at the model's length unless train.seq_len says otherwise
        defaults = {"seq_len": self.raw["model"]["seq_len"]} if "seq_len" in self.raw["model"] else {}
        return TrainConfig(**{**defaults, **self.raw["train"]})

    def extraction_params(self) -> ExtractionParams:
        f = self.raw["features"]
        return ExtractionParams(image=bool(f["image"]), flow=bool(f["flow"]),
                                flow_backend=f["flow_backend"], keep_fraction=float(f["keep_fraction"]))

    def split_policy(self) -> SplitPolicy:
        s = self.raw["split"]
        return SplitPolicy(frozenset(s["train_tags"]), frozenset(s["test_tags"]))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)
