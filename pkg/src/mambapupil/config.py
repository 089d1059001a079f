"""Run configuration: a key-value tree loaded from YAML or JSON, plus dotted overrides."""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .augment import AugmentConfig
from .autodiff import LrSchedule
from .errors import ConfigError
from .model import ModelConfig
from .training import RepresentationConfig, SegmentSpec, TrainConfig

CONFIG_ENV = "MAMBAPUPIL_CONFIG"


@dataclass
class Paths:
    data: str | None = None  # directory of recordings; last quarter is held out
    val_data: str | None = None  # explicit held-out set, overrides the split
    out: str = "runs/default"


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "float32"
    paths: Paths = field(default_factory=Paths)
    representation: RepresentationConfig = field(default_factory=RepresentationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    segments: SegmentSpec = field(default_factory=SegmentSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.002, 1e-5, 50, 1))
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision", "must be float32 or float64")
        rep = self.representation
        if self.model.in_channels != rep.channels:
            raise ConfigError("model.in_channels",
                              f"{self.model.in_channels} but representation {rep.kind!r} has {rep.channels} channels")
        if tuple(self.model.resolution) != (rep.height, rep.width):
            raise ConfigError("model.resolution",
                              f"{list(self.model.resolution)} != representation [{rep.height}, {rep.width}]")
        # seed and precision live at the top level; the trainer sees copies
        self.train = dataclasses.replace(self.train, seed=self.seed, precision=self.precision)

    def to_dict(self) -> dict:
        tree = _to_plain(dataclasses.asdict(self))
        for key in ("seed", "precision"):
            del tree["train"][key]
        return tree


_SECTIONS = {
    "paths": Paths,
    "representation": RepresentationConfig,
    "model": ModelConfig,
    "segments": SegmentSpec,
    "augment": AugmentConfig,
    "schedule": LrSchedule,
    "train": TrainConfig,
}
_TOP_LEVEL = {"seed", "precision"}


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build_section(name: str, cls: type, values: Any) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigError(name, "expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    if cls is TrainConfig and ({"seed", "precision"} & set(values)):
        raise ConfigError(f"{name}.seed", "set seed and precision at the top level")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def from_tree(tree: Mapping[str, Any] | None) -> RunConfig:
    """Validate a nested mapping into a :class:`RunConfig`; missing keys take defaults."""
    tree = dict(tree or {})
    for key in tree:
        if key not in _SECTIONS and key not in _TOP_LEVEL:
            raise ConfigError(key, "unknown field")
    kwargs: dict[str, Any] = {}
    for key in _TOP_LEVEL & set(tree):
        kwargs[key] = tree[key]
    if "seed" in kwargs and (isinstance(kwargs["seed"], bool) or not isinstance(kwargs["seed"], int)):
        raise ConfigError("seed", "must be an integer")
    for name, cls in _SECTIONS.items():
        if name in tree:
            kwargs[name] = _build_section(name, cls, tree[name] or {})
    return RunConfig(**kwargs)


def read_tree(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    try:
        tree = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(str(path), f"cannot parse config: {exc}") from exc
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return tree


def apply_override(tree: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` in place; the value is parsed as YAML (so ``[1, 2]``, ``true``, ``0.5`` work)."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key.path=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(assignment, "empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads forms like 1e-3 as strings
        try:
            value = float(value)
        except ValueError:
            pass
    node = tree
    for i, part in enumerate(parts[:-1]):
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(".".join(parts[:i + 1]), "is not a section")
        node = child
    node[parts[-1]] = value


def load_config(path: str | Path | None = None, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Config file (or ``$MAMBAPUPIL_CONFIG``, or defaults), then overrides in order."""
    path = path or os.environ.get(CONFIG_ENV) or None
    tree = read_tree(path) if path else {}
    tree = copy.deepcopy(tree)
    for assignment in overrides:
        apply_override(tree, assignment)
    return from_tree(tree)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
