"""Experiment configuration: JSON blocks validated into dataclasses before any compute."""

from __future__ import annotations

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .design import TemperatureSchedule
from .trainer import CriticSpec, TrainConfig

CONFIG_SCHEMA = "config/v1"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted path of the field."""


@dataclass
class ModelBlock:
    name: str
    options: dict = field(default_factory=dict)
    instance_seed: int = 0


@dataclass
class ContextsBlock:
    """Context rows, a path to a JSON list of rows, or ``None`` for the model's defaults."""

    C: typing.Any = None
    Cstar: typing.Any = None


@dataclass
class MethodBlock:
    kind: str = "cobed"
    alpha: float = 1.0
    mc_samples: int = 10_000
    exact_moments: bool = True
    sigma: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("cobed", "random", "ucb", "thompson"):
            raise ValueError(f"unknown method {self.kind!r}")


@dataclass
class DesignBlock:
    init: str = "default"
    init_scale: float | None = None


@dataclass
class EvaluateBlock:
    environments: int = 500
    particles: int = 2000
    eig: bool = True
    eig_batches: int = 10
    eig_train: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if self.environments < 1 or self.particles < 2 or self.eig_batches < 1 or self.jobs < 1:
            raise ValueError("environments, eig_batches and jobs must be >= 1; particles >= 2")


@dataclass
class ExperimentConfig:
    model: ModelBlock
    contexts: ContextsBlock = field(default_factory=ContextsBlock)
    method: MethodBlock = field(default_factory=MethodBlock)
    design: DesignBlock = field(default_factory=DesignBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvaluateBlock = field(default_factory=EvaluateBlock)
    seed: int = 0
    output: str = "runs/out"
    schema: str = CONFIG_SCHEMA

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def eig_train_config(self) -> TrainConfig:
        """Training settings for the critic-only EIG estimate (train block plus overrides)."""
        merged = self.to_dict()["train"]
        _deep_update(merged, self.evaluate.eig_train, "evaluate.eig_train")
        return build_dataclass(TrainConfig, merged, "evaluate.eig_train")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _deep_update(base: dict, extra: dict, path: str) -> None:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v, f"{path}.{k}")
        else:
            base[k] = v


_NESTED = {TrainConfig: {"temperature": TemperatureSchedule, "critic": CriticSpec},
           ExperimentConfig: {"model": ModelBlock, "contexts": ContextsBlock, "method": MethodBlock,
                              "design": DesignBlock, "train": TrainConfig, "evaluate": EvaluateBlock}}


def _check_type(value, annotation: str, path: str):
    ann = annotation.replace(" ", "")
    if value is None:
        if "None" in ann or ann == "typing.Any":
            return value
        raise ConfigError(f"{path}: must not be null")
    base = ann.split("|")[0]
    if base.startswith("tuple") or base.startswith("list"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif base == "int":
        if isinstance(value, bool) or not (isinstance(value, int) or
                                           (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    elif base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    elif base == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {value!r}")
    return value


def build_dataclass(cls, data, path: str = ""):
    """Instantiate ``cls`` from a JSON object, rejecting unknown keys with their dotted path."""
    where = path or "<root>"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        sub = f"{path + '.' if path else ''}{name}"
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{sub}: required field missing")
            continue
        value = data[name]
        nested = _NESTED.get(cls, {}).get(name)
        if nested is not None:
            kwargs[name] = build_dataclass(nested, value, sub)
        else:
            kwargs[name] = _check_type(value, str(f.type), sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config object. ``overrides`` maps dotted paths to values and wins over ``data``."""
    data = copy.deepcopy(data)
    for dotted, value in (overrides or {}).items():
        set_path(data, dotted, value)
    if "schema" in data and data["schema"] != CONFIG_SCHEMA:
        raise ConfigError(f"schema: unsupported config schema {data['schema']!r}")
    cfg = build_dataclass(ExperimentConfig, data)
    from .models import MODEL_NAMES

    if cfg.model.name not in MODEL_NAMES:
        raise ConfigError(f"model.name: unknown model {cfg.model.name!r}")
    return cfg


def set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {k} is not an object")
        node = nxt
    node[keys[-1]] = value


def _shipped() -> list[str]:
    root = resources.files("ctxbed") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_names() -> list[str]:
    """Shipped experiment configs (``desk_*`` and ``paper_*``)."""
    return [n for n in _shipped() if not n.startswith("sweep_")]


def sweep_names() -> list[str]:
    return [n for n in _shipped() if n.startswith("sweep_")]


def load_json(path_or_preset: str) -> dict:
    """Read a JSON file, or a shipped preset by name (e.g. ``desk_discrete_quadratic``)."""
    p = Path(path_or_preset)
    if p.is_file():
        text = p.read_text()
    else:
        res = resources.files("ctxbed") / "presets" / f"{path_or_preset}.json"
        if not res.is_file():
            raise ConfigError(f"config: no file or preset named {path_or_preset!r}")
        text = res.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None


def load_config(path_or_preset: str, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(load_json(path_or_preset), overrides)


def resolve_rows(spec, base: Path | None = None):
    """Context rows from inline lists or a JSON file path; ``None`` passes through."""
    if spec is None or isinstance(spec, list):
        return spec
    p = Path(spec)
    if base is not None and not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ConfigError(f"contexts: file {spec!r} not found")
    return json.loads(p.read_text())
