"""JSON experiment configuration and run manifests.

A config is a JSON object with these top-level keys (unknown keys are errors)::

    {
      "data":    {"kind": "idx", "images": ..., "labels": ..., "train_size": 5000,
                  "val_size": 1000, "split_seed": 0, "mean": 0.1307, "std": 0.3081}
                 | {"kind": "synthetic", "classes": 3, "dims": 8, ..., "val_fraction": 0.2},
      "model":   {"kind": "mlp", "widths": [784, 256, 128, 10], ...},
      "train":   {"epochs": 30, "batch_size": 64, "lr": 0.1, ...},
      "methods": {"baseline": {}, "fw_hl": {"hidden_transforms": [{"kind": "feature_weaken_hidden", "ws": 0.8}]}},
      "seeds":   [0, 1, 2],
      "attack":  {"source": "baseline", "checkpoints": {...}, "attacks": [...], "max_samples": 1000}
    }

A manifest is the same document fully resolved, plus ``tool_version`` and
``notes``; feeding a manifest back as a config replays the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .adversarial import AttackSpec
from .augment import AugmentSpec
from .data import (MNIST_MEAN, MNIST_STD, Dataset, SyntheticSpec, load_idx, normalize,
                   stratified_split, synthetic_blobs)
from .models import ModelSpec
from .train import TrainConfig

DATA_DIR_ENV = "WEAKENLAB_DATA_DIR"

NOTES = {
    "feature_weaken_input": "applied after input normalization",
    "adversarial_split": "attacks use the validation/test split",
    "summary_statistic": "mean over seeds of per-run best val_top1",
}


class ConfigError(ValueError):
    """A config field is missing, unknown or out of range; the message names the field."""


def _check_keys(section: str, d: dict, allowed, required=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{section}: missing key(s) {sorted(missing)}")


def _build(section: str, cls, d: dict, skip=()):
    names = [f.name for f in fields(cls) if f.name not in skip]
    _check_keys(section, d, names)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass(frozen=True)
class DataConfig:
    kind: str = "idx"
    images: str = ""
    labels: str = ""
    val_images: str = ""
    val_labels: str = ""
    train_size: int | None = None
    val_size: int | None = None
    split_seed: int = 0
    mean: float | list | None = MNIST_MEAN
    std: float | list | None = MNIST_STD
    num_classes: int = 10
    synthetic: dict | None = None
    val_fraction: float = 0.2

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def resolve_path(p: str, base: Path | None) -> Path:
    path = Path(os.path.expanduser(p))
    if path.is_absolute():
        return path
    root = os.environ.get(DATA_DIR_ENV)
    if root and (Path(root) / path).exists():
        return Path(root) / path
    return (base / path) if base is not None else path


def load_datasets(cfg: DataConfig, base: Path | None = None) -> tuple[Dataset, Dataset]:
    """Return normalized ``(train, val)`` splits described by ``cfg``."""
    if cfg.kind == "synthetic":
        spec = _build("data.synthetic", SyntheticSpec, dict(cfg.synthetic or {}))
        full = synthetic_blobs(spec)
        n_val = int(round(len(full) * cfg.val_fraction))
        val, train = stratified_split(full, n_val, cfg.split_seed)
    elif cfg.kind == "idx":
        if not cfg.images or not cfg.labels:
            raise ConfigError("data: 'images' and 'labels' are required for kind 'idx'")
        full = load_idx(resolve_path(cfg.images, base), resolve_path(cfg.labels, base), cfg.num_classes)
        if cfg.val_images:
            train = full
            val = load_idx(resolve_path(cfg.val_images, base), resolve_path(cfg.val_labels, base),
                           cfg.num_classes)
            if cfg.train_size is not None:
                train = stratified_split(train, cfg.train_size, cfg.split_seed)[0]
            if cfg.val_size is not None:
                val = stratified_split(val, cfg.val_size, cfg.split_seed + 1)[0]
        else:
            n_train = cfg.train_size if cfg.train_size is not None else len(full) - (cfg.val_size or 0)
            train, rest = stratified_split(full, n_train, cfg.split_seed)
            n_val = cfg.val_size if cfg.val_size is not None else len(rest)
            if n_val > len(rest):
                raise ConfigError(f"data: val_size {n_val} exceeds the {len(rest)} samples left after training split")
            val = stratified_split(rest, n_val, cfg.split_seed + 1)[0]
    else:
        raise ConfigError(f"data.kind: expected 'idx' or 'synthetic', got {cfg.kind!r}")
    if cfg.mean is not None:
        if cfg.std is None:
            raise ConfigError("data: 'std' is required when 'mean' is set")
        train = normalize(train, cfg.mean, cfg.std)
        val = normalize(val, cfg.mean, cfg.std)
    return train, val


@dataclass(frozen=True)
class AttackConfig:
    source: str = "baseline"
    checkpoints: dict = field(default_factory=dict)
    attacks: tuple[dict, ...] = ({"kind": "fgsm", "epsilon": 0.1},
                                 {"kind": "ifgsm", "epsilon": 0.1, "iterations": 10})
    max_samples: int | None = None
    seed: int = 0

    def attack_specs(self, clip_range) -> list[AttackSpec]:
        specs = []
        for i, a in enumerate(self.attacks):
            a = dict(a)
            a.setdefault("clip_range", list(clip_range))
            specs.append(_build(f"attack.attacks[{i}]", AttackSpec, a))
        return specs

    def to_dict(self) -> dict:
        return {"source": self.source, "checkpoints": dict(self.checkpoints),
                "attacks": [dict(a) for a in self.attacks], "max_samples": self.max_samples,
                "seed": self.seed}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    model: ModelSpec
    train: TrainConfig
    methods: dict[str, AugmentSpec]
    seeds: tuple[int, ...] = (0,)
    attack: AttackConfig | None = None
    base_dir: Path | None = None

    def resolved_data(self) -> dict:
        d = self.data.to_dict()
        for key in ("images", "labels", "val_images", "val_labels"):
            if d[key]:
                d[key] = str(resolve_path(d[key], self.base_dir).resolve())
        return d

    def to_manifest(self) -> dict:
        attack = None
        if self.attack is not None:
            attack = self.attack.to_dict()
            attack["checkpoints"] = {m: str(resolve_path(p, self.base_dir).resolve())
                                     for m, p in attack["checkpoints"].items()}
        return {
            "tool_version": __version__,
            "notes": dict(NOTES),
            "data": self.resolved_data(),
            "model": self.model.to_dict(),
            "train": {k: v for k, v in self.train.to_dict().items() if k not in ("augment", "seed")},
            "methods": {name: spec.to_dict() for name, spec in self.methods.items()},
            "seeds": list(self.seeds),
            **({"attack": attack} if attack is not None else {}),
        }


TOP_LEVEL = ("data", "model", "train", "methods", "seeds", "attack", "sweep", "tool_version", "notes")


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _check_keys("config", doc, TOP_LEVEL, required=("data", "model"))
    data = _build("data", DataConfig, dict(doc["data"]))
    model_d = dict(doc["model"])
    model = _build("model", ModelSpec, model_d)
    train_d = dict(doc.get("train", {}))
    _check_keys("train", train_d, [f.name for f in fields(TrainConfig) if f.name not in ("augment", "seed")])
    try:
        train = TrainConfig(**train_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    methods_d = doc.get("methods", {"baseline": {}})
    if not isinstance(methods_d, dict) or not methods_d:
        raise ConfigError("methods: expected a non-empty object of name -> augment spec")
    methods = {}
    for name, spec in methods_d.items():
        try:
            methods[name] = AugmentSpec.from_dict(spec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"methods.{name}: {exc}") from exc
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of integers")
    attack = None
    if "attack" in doc:
        attack_d = dict(doc["attack"])
        if "attacks" in attack_d:
            attack_d["attacks"] = tuple(attack_d["attacks"])
        attack = _build("attack", AttackConfig, attack_d)
    return ExperimentConfig(data, model, train, methods, tuple(seeds), attack, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, base_dir=path.resolve().parent)
