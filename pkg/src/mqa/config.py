"""Run configuration: one YAML file, environment overrides, and a stable hash.

Keys are grouped in sections (``synth``, ``augment``, ``scoregen``,
``train``) plus a top-level ``seed``. An environment variable
``MQA_<SECTION>__<KEY>`` overrides ``<section>.<key>``; ``MQA_SEED``
overrides the seed. Values are parsed as YAML scalars, so ``0.001``,
``true`` and ``[1, 2]`` keep their types.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from mqa.augment import AugmentationSpec, default_policy
from mqa.errors import ConfigurationError
from mqa.harness import TrainConfig
from mqa.scoregen import ScoreGenConfig
from mqa.synth import SynthConfig

ENV_PREFIX = "MQA_"
SECTIONS = ("synth", "augment", "scoregen", "train")


def _dataclass_defaults(cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.default is not dataclasses.MISSING:
            value = f.default
        else:
            value = f.default_factory()  # type: ignore[misc]
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def default_config() -> dict:
    return {
        "seed": 0,
        "synth": _dataclass_defaults(SynthConfig),
        "augment": {"policy": [s.to_dict() for s in default_policy()]},
        "scoregen": _dataclass_defaults(ScoreGenConfig, skip=("policy",)),
        "train": _dataclass_defaults(TrainConfig, skip=("augment_policy", "seed")),
    }


def _merge(base: dict, update: Mapping, where: str = "") -> dict:
    for key, value in update.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and isinstance(value, Mapping) and key in SECTIONS:
            _merge(base[key], value, where + key + ".")
        else:
            base[key] = value
    return base


def _set_path(cfg: dict, dotted: str, raw: str) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigurationError(f"unknown config section {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    node[parts[-1]] = yaml.safe_load(raw)


def env_overrides(env: Mapping[str, str]) -> list[tuple[str, str]]:
    out = []
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key == "data" or key.startswith("uiprmd"):
            continue  # dataset locations, not configuration
        out.append((key.replace("__", "."), env[name]))
    return out


def load_config(path=None, env: Mapping[str, str] | None = None, overrides: Iterable[str] = ()) -> dict:
    """Defaults, then the file at ``path``, then ``MQA_*`` variables, then ``key=value`` overrides."""
    cfg = default_config()
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        _merge(cfg, loaded)
    for key, raw in env_overrides(os.environ if env is None else env):
        _set_path(cfg, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        _set_path(cfg, key.strip(), raw)
    validate(cfg)
    return cfg


def config_hash(cfg: Mapping) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def policy(cfg: Mapping) -> list[AugmentationSpec]:
    return [AugmentationSpec.from_dict(d) for d in cfg["augment"]["policy"]]


def synth_config(cfg: Mapping) -> SynthConfig:
    d = dict(cfg["synth"])
    for key in ("correct_quality", "incorrect_quality"):
        d[key] = tuple(d[key])
    return SynthConfig(**d)


def scoregen_config(cfg: Mapping) -> ScoreGenConfig:
    d = dict(cfg["scoregen"])
    d["hidden"] = tuple(d["hidden"])
    return ScoreGenConfig(**d, policy=policy(cfg))


def train_config(cfg: Mapping) -> TrainConfig:
    d = dict(cfg["train"])
    d["augment_policy"] = cfg["augment"]["policy"]
    d["seed"] = cfg["seed"]
    return TrainConfig.from_dict(d)


def validate(cfg: Mapping) -> None:
    """Build every typed config once so bad values fail early with a clear message."""
    try:
        policy(cfg)
        synth_config(cfg)
        scoregen_config(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid configuration: {exc}") from None
    if not isinstance(cfg["seed"], int):
        raise ConfigurationError(f"seed must be an integer, got {cfg['seed']!r}")


def dump_config(cfg: Mapping) -> str:
    return yaml.safe_dump(copy.deepcopy(dict(cfg)), sort_keys=True)
