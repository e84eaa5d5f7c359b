"""Declarative JSON run configuration.

One document with sections {data, model, ssdp, ddl, ssdt, trainer, io}
drives every command. Unknown sections or keys are rejected so typos never
silently fall back to defaults, and every rejection names the offending
key. Defaults follow the reference hyperparameters (alpha 1, beta 0.4,
margin 1, lr 1e-3, batch size 12) with the remaining values documented in
the README.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .data import SyntheticSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


# section -> key -> (default, type or tuple of types, predicate or None, requirement text)
_SCHEMA: dict[str, dict[str, tuple] ] = {
    "data": {
        "classes": (20, int, lambda v: v >= 2, "must be an integer >= 2"),
        "images_per_class": (6, int, lambda v: v >= 2, "must be an integer >= 2"),
        "image_size": (64, int, lambda v: v >= 8 and v % 8 == 0, "must be a multiple of 8"),
        "patch_size": (8, int, _positive, "must be a positive integer"),
        "jitter": (6, int, _non_negative, "must be a non-negative integer"),
        "noise": (0.05, (int, float), _non_negative, "must be >= 0"),
        "seed": (1, int, _non_negative, "must be a non-negative integer"),
        "regime_check": (True, bool, None, ""),
    },
    "model": {
        "seed": (None, (int, type(None)), None, ""),  # defaults to trainer.seed
    },
    "ssdp": {
        "square_mask": (False, bool, None, ""),
    },
    "ddl": {
        "queue_len": (2, int, _non_negative, "must be a non-negative integer"),
        "margin": (1.0, (int, float), None, ""),
        "negative_sampling": ("full", str, lambda v: v in ("full", "sampled"), "must be 'full' or 'sampled'"),
    },
    "ssdt": {
        "temperature": (1.0, (int, float), _positive, "must be > 0"),
        "teacher": ("aug", str, lambda v: v in ("aug", "raw"), "must be 'aug' or 'raw'"),
    },
    "trainer": {
        "alpha": (1.0, (int, float), _non_negative, "must be >= 0"),
        "beta": (0.4, (int, float), _non_negative, "must be >= 0"),
        "label_smoothing": (0.1, (int, float), lambda v: 0 <= v < 1, "must be in [0, 1)"),
        "lr": (0.001, (int, float), _non_negative, "must be >= 0"),
        "weight_decay": (0.01, (int, float), _non_negative, "must be >= 0"),
        "batch_size": (12, int, lambda v: v >= 2, "must be an integer >= 2"),
        "epochs": (30, int, _positive, "must be a positive integer"),
        "eval_every": (10, int, _positive, "must be a positive integer"),
        "seed": (0, int, _non_negative, "must be a non-negative integer"),
        "cls_branches": ("both", str, lambda v: v in ("both", "raw"), "must be 'both' or 'raw'"),
    },
    "io": {
        "metrics": ("metrics.jsonl", str, lambda v: len(v) > 0, "must be a non-empty filename"),
        "checkpoint": ("model.ckpt", str, lambda v: len(v) > 0, "must be a non-empty filename"),
    },
}


def default_config_dict() -> dict:
    return {sec: {k: copy.deepcopy(spec[0]) for k, spec in keys.items()} for sec, keys in _SCHEMA.items()}


def _check_type(path: str, value, kinds) -> None:
    kinds = kinds if isinstance(kinds, tuple) else (kinds,)
    # bool is an int subclass; only accept it where bool is listed
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"{path}: expected {kinds[0].__name__}, got a boolean")
    if not isinstance(value, kinds):
        names = "/".join("null" if k is type(None) else k.__name__ for k in kinds)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")


@dataclass
class RunConfig:
    raw: dict  # fully merged and validated document

    def data_spec(self) -> SyntheticSpec:
        d = self.raw["data"]
        return SyntheticSpec(
            classes=d["classes"],
            images_per_class=d["images_per_class"],
            image_size=d["image_size"],
            patch_size=d["patch_size"],
            jitter=d["jitter"],
            noise=float(d["noise"]),
            seed=d["seed"],
            regime_check=d["regime_check"],
        )

    def train_config(self) -> TrainConfig:
        r = self.raw
        return TrainConfig(
            alpha=float(r["trainer"]["alpha"]),
            beta=float(r["trainer"]["beta"]),
            margin=float(r["ddl"]["margin"]),
            queue_len=r["ddl"]["queue_len"],
            temperature=float(r["ssdt"]["temperature"]),
            teacher=r["ssdt"]["teacher"],
            label_smoothing=float(r["trainer"]["label_smoothing"]),
            lr=float(r["trainer"]["lr"]),
            weight_decay=float(r["trainer"]["weight_decay"]),
            batch_size=r["trainer"]["batch_size"],
            epochs=r["trainer"]["epochs"],
            eval_every=r["trainer"]["eval_every"],
            seed=r["trainer"]["seed"],
            image_size=r["data"]["image_size"],
            classes=r["data"]["classes"],
            cls_branches=r["trainer"]["cls_branches"],
            square_mask=r["ssdp"]["square_mask"],
            negative_sampling=r["ddl"]["negative_sampling"],
            model_seed=r["model"]["seed"],
        )

    @property
    def metrics_name(self) -> str:
        return self.raw["io"]["metrics"]

    @property
    def checkpoint_name(self) -> str:
        return self.raw["io"]["checkpoint"]

    def with_seed(self, seed: int) -> "RunConfig":
        merged = copy.deepcopy(self.raw)
        merged["trainer"]["seed"] = seed
        return RunConfig(raw=merged)

    def digest(self) -> bytes:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).digest()


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    merged = default_config_dict()
    for section, keys in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(keys, dict):
            raise ConfigError(f"{section}: section must be a JSON object")
        for key, value in keys.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            _default, kinds, predicate, requirement = _SCHEMA[section][key]
            path = f"{section}.{key}"
            _check_type(path, value, kinds)
            if predicate is not None and value is not None and not predicate(value):
                raise ConfigError(f"{path}: {requirement}, got {value!r}")
            merged[section][key] = value

    cfg = RunConfig(raw=merged)
    # cross-field checks live with their owning types
    try:
        cfg.data_spec().validate()
    except ValueError as err:
        raise ConfigError(f"data: {err}") from None
    try:
        cfg.train_config().validate()
    except ValueError as err:
        raise ConfigError(f"trainer: {err}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from None
    return parse_config(doc)
