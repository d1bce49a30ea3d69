"""Run configuration: a nested YAML file, schema-validated with unknown
keys rejected before any work starts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .datagen import GeneratorConfig, LabelModel
from .model import ModelConfig, UserWeightTables
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _check_keys(section, data, allowed):
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")


def _build(cls, data, section, special=None):
    special = special or {}
    names = [f.name for f in fields(cls)]
    _check_keys(section, data, names)
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = special[key](value) if key in special else value
    return cls(**kwargs)


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    eval_k: int = 3


def run_config_from_dict(data):
    _check_keys("<root>", data, ("seed", "model", "train", "generator", "eval_k"))
    model = _build(ModelConfig, data.get("model", {}), "model", special={
        "label_weights": lambda v: np.array(v, dtype=np.float64),
        "heads": tuple,
        "utilities": tuple,
        "user_weights": lambda v: _build(UserWeightTables, v, "model.user_weights"),
    })
    train = _build(TrainConfig, data.get("train", {}), "train")
    gen = _build(GeneratorConfig, data.get("generator", {}), "generator", special={
        "actions_per_user": tuple,
        "label_model": lambda v: _build(LabelModel, v, "generator.label_model"),
    })
    train.validate()
    gen.validate()
    return RunConfig(seed=int(data.get("seed", 0)), model=model, train=train,
                     generator=gen, eval_k=int(data.get("eval_k", 3)))


def load_run_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("run config must be a mapping")
    return run_config_from_dict(data)


def apply_overrides(data, overrides):
    """Apply dotted key=value overrides to a raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar at {part!r}")
        node[parts[-1]] = value
    return data


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def run_config_to_dict(cfg):
    return {
        "seed": cfg.seed,
        "model": _plain(cfg.model),
        "train": _plain(cfg.train),
        "generator": _plain(cfg.generator),
        "eval_k": cfg.eval_k,
    }


def model_config_to_dict(model_cfg):
    return _plain(model_cfg)


def model_config_from_dict(data):
    return _build(ModelConfig, data, "model", special={
        "label_weights": lambda v: np.array(v, dtype=np.float64),
        "heads": tuple,
        "utilities": tuple,
        "user_weights": lambda v: _build(UserWeightTables, v, "model.user_weights"),
    })
