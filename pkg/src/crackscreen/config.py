"""Run configuration: JSON config file, dotted-path overrides, and the
named ablation presets that reproduce the training-strategy study.

A run config has four sections: arch (preset name or full dict), train
(TrainConfig fields; augment may be false/true/dict), data (dataset root,
split fractions, split seed), out_dir. The fully resolved config is
persisted next to every run's outputs.
"""

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .arch import ArchConfig, get_preset, preset_names
from .augment import DegradationSpec
from .train import TrainConfig

__all__ = ["ConfigError", "DEFAULT_CONFIG", "ABLATIONS", "load_run_config",
           "apply_override", "resolve_run_config", "ResolvedRun", "OUT_DIR_ENV"]

OUT_DIR_ENV = "CRACKSCREEN_OUT"


class ConfigError(ValueError):
    """Invalid or incomplete run configuration; message carries the field path."""


DEFAULT_CONFIG = {
    "arch": "tiny",
    "train": {
        "epochs": 40,
        "batch_size": 64,
        "lr_max": 1e-3,
        "weight_decay": 1e-4,
        "warmup_epochs": 3,
        "loss": {"kind": "focal", "alpha": 0.75, "gamma": 2.0, "class_weights": []},
        "augment": True,
        "sampler": "uniform",
        "seed": 0,
        "workers": 0,
    },
    "data": {"root": None, "fractions": [0.70, 0.15, 0.15], "split_seed": 0},
    "out_dir": None,
}

# the seven training-strategy ablations: loss x augmentation x sampler x attention
ABLATIONS = {
    "baseline-ce": {"train.loss.kind": "ce", "train.augment": False,
                    "train.sampler": "uniform", "cbam": False},
    "fl": {"train.loss.kind": "focal", "train.augment": False,
           "train.sampler": "uniform", "cbam": False},
    "ra": {"train.loss.kind": "ce", "train.augment": True,
           "train.sampler": "uniform", "cbam": False},
    "weighted-ce": {"train.loss.kind": "weighted_ce", "train.augment": False,
                    "train.sampler": "uniform", "cbam": False},
    "weighted-sampler": {"train.loss.kind": "ce", "train.augment": False,
                         "train.sampler": "weighted", "cbam": False},
    "ra-fl": {"train.loss.kind": "focal", "train.augment": True,
              "train.sampler": "uniform", "cbam": False},
    "ra-fl-cbam": {"train.loss.kind": "focal", "train.augment": True,
                   "train.sampler": "uniform", "cbam": True},
}


def _set_path(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config field {dotted!r}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config field {dotted!r}")
    node[parts[-1]] = value


def apply_override(cfg, assignment):
    """Apply one 'a.b.c=value' override; the value is parsed as JSON when it
    parses, else taken as a raw string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like path=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    _set_path(cfg, dotted.strip(), value)


def _apply_cbam_choice(cfg, want_cbam):
    arch = cfg["arch"]
    if isinstance(arch, str):
        base = arch[:-len("-cbam")] if arch.endswith("-cbam") else arch
        cfg["arch"] = f"{base}-cbam" if want_cbam else base
    else:
        arch["cbam"] = bool(want_cbam)


def load_run_config(path=None, ablation=None, overrides=(), flat=None):
    """Merge defaults <- config file <- ablation preset <- explicit overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        _merge(cfg, user, "")
    if ablation is not None:
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; "
                              f"have {sorted(ABLATIONS)}")
        for dotted, value in ABLATIONS[ablation].items():
            if dotted == "cbam":
                _apply_cbam_choice(cfg, value)
            else:
                _set_path(cfg, dotted, value)
    for assignment in overrides or ():
        apply_override(cfg, assignment)
    for dotted, value in (flat or {}).items():
        if value is not None:
            _set_path(cfg, dotted, value)
    if cfg.get("out_dir") is None and os.environ.get(OUT_DIR_ENV):
        cfg["out_dir"] = os.environ[OUT_DIR_ENV]
    return cfg


def _merge(base, update, prefix):
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field {path!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "arch":
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


@dataclass
class ResolvedRun:
    arch: ArchConfig
    train: TrainConfig
    data_root: str | None
    fractions: tuple
    split_seed: int
    out_dir: str | None
    raw: dict

    def dump(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.raw, indent=1, sort_keys=True))


def resolve_run_config(cfg) -> ResolvedRun:
    """Validate a merged config dict into typed pieces; ConfigError on problems."""
    arch_spec = cfg["arch"]
    try:
        if isinstance(arch_spec, str):
            arch = get_preset(arch_spec)
        else:
            arch = ArchConfig.from_dict(arch_spec)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"arch: {exc}") from None
    t = copy.deepcopy(cfg["train"])
    aug = t.get("augment")
    if aug is True:
        t["augment"] = DegradationSpec.default().to_dict()
    elif aug is False:
        t["augment"] = None
    try:
        train_cfg = TrainConfig.from_dict(t)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"train: {exc}") from None
    fractions = tuple(cfg["data"]["fractions"])
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"data.fractions: {fractions} must be 3 values summing to 1")
    raw = copy.deepcopy(cfg)
    raw["arch"] = arch.to_dict()
    raw["train"] = train_cfg.to_dict()
    return ResolvedRun(arch, train_cfg, cfg["data"]["root"], fractions,
                       int(cfg["data"]["split_seed"]), cfg.get("out_dir"), raw)
