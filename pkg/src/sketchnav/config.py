"""Run configuration: a flat key-value text format with [section] headers.

No external parser; '#' starts a comment, keys are `name = value`. Every key
must belong to the schema of its section, and parse errors carry line
numbers. RunConfig bundles the typed values with defaults chosen for
desk-scale runs; reward and optimization defaults follow the published
training recipe this project reproduces at toy scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .grid import ActionConfig, SensorConfig
from .policy import ModelConfig
from .worldgen import WorldParams


class ConfigError(Exception):
    pass


@dataclass
class RewardConfig:
    r_d: float = 2.0    # geodesic distance decreased
    r_i: float = 0.05   # action matched the expert's
    r_s: float = 10.0   # success

    def validate(self) -> None:
        if min(self.r_d, self.r_i, self.r_s) < 0:
            raise ConfigError("reward weights must be non-negative")


@dataclass
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def validate(self) -> None:
        for v, name in ((self.gamma, "gamma"), (self.lam, "lam")):
            if not (0 < v <= 1):
                raise ConfigError(f"{name} must be in (0, 1]")


@dataclass
class PpoConfig:
    rollout_length: int = 150
    epochs_per_update: int = 4
    clip_range: float = 0.2         # linearly decayed over training
    learning_rate: float = 1e-5     # linearly decayed over training
    lambda_goal: float = 1.0
    weight_decay: float = 0.01
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 0.5
    explore_eps: float = 0.03   # uniform action mixture in rollout collection
    expert_eps: float = 0.05    # expert action mixture in rollout collection
    warmup_updates: int = 0     # imitation-bootstrap updates before PPO
    warmup_expert_eps: float = 0.5
    workers: int = 8
    minibatch_workers: int = 4
    total_updates: int = 100
    eval_every: int = 5
    eval_episodes: int = 8

    def validate(self) -> None:
        positive = ["rollout_length", "epochs_per_update", "clip_range",
                    "learning_rate", "weight_decay", "workers",
                    "minibatch_workers", "total_updates"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.minibatch_workers > self.workers:
            raise ConfigError("minibatch_workers cannot exceed workers")


@dataclass
class DatasetConfig:
    n_train_worlds: int = 10
    episodes_per_world: int = 5
    n_val_seen_episodes: int = 10
    n_val_unseen_worlds: int = 4
    episodes_per_unseen_world: int = 5
    seed: int = 1
    min_geodesic: float = 2.0       # meters
    unseen_min_geodesic: float = 2.0

    def validate(self) -> None:
        if self.n_train_worlds < 1 or self.episodes_per_world < 1:
            raise ConfigError("dataset needs at least one train world and episode")


@dataclass
class PipelineConfig:
    erosion_radius: int = 1
    epsilon_low: float = 1.5
    epsilon_high: float = 2.0
    jitter_px: float = 2.0
    min_loop_px: float = 12.0
    base_budget_px: float = 24.0
    gap_fraction: float = 0.10
    door_threshold: float = 2.0
    ink_threshold: int = 128


@dataclass
class RunConfig:
    world: WorldParams = field(default_factory=WorldParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    actions: ActionConfig = field(default_factory=ActionConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    gae: GaeConfig = field(default_factory=GaeConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    success_radius: float = 1.0
    max_steps: int = 500
    train_seed: int = 7

    def validate(self) -> None:
        self.world.validate()
        self.dataset.validate()
        self.reward.validate()
        self.gae.validate()
        self.ppo.validate()


_SECTION_FIELDS = {
    "world": {f.name: f.type for f in fields(WorldParams)},
    "pipeline": {f.name: f.type for f in fields(PipelineConfig)},
    "dataset": {f.name: f.type for f in fields(DatasetConfig)},
    "model": {f.name: f.type for f in fields(ModelConfig)},
    "actions": {f.name: f.type for f in fields(ActionConfig)},
    "sensor": {f.name: f.type for f in fields(SensorConfig)},
    "reward": {f.name: f.type for f in fields(RewardConfig)},
    "gae": {f.name: f.type for f in fields(GaeConfig)},
    "ppo": {f.name: f.type for f in fields(PpoConfig)},
    "run": {"success_radius": "float", "max_steps": "int", "train_seed": "int"},
}


def _convert(raw: str, type_name: str, where: str):
    t = str(type_name)
    try:
        if "tuple" in t:
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated values")
            return (int(parts[0]), int(parts[1])) if "int" in t else \
                (float(parts[0]), float(parts[1]))
        if "bool" in t:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"{where}: cannot parse {raw!r}: {e}") from None


def parse_config(text: str) -> RunConfig:
    """Parse the sectioned key-value format; errors carry line numbers."""
    cfg = RunConfig()
    section = None
    updates: dict[str, dict[str, object]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in _SECTION_FIELDS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {body!r}")
        key, _, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        schema = _SECTION_FIELDS[section]
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        updates.setdefault(section, {})[key] = _convert(
            raw, schema[key], f"line {lineno}")

    def rebuild(obj, section_name):
        vals = updates.get(section_name, {})
        if not vals:
            return obj
        current = {f.name: getattr(obj, f.name) for f in fields(obj)}
        current.update(vals)
        return type(obj)(**current)

    cfg.world = rebuild(cfg.world, "world")
    cfg.pipeline = rebuild(cfg.pipeline, "pipeline")
    cfg.dataset = rebuild(cfg.dataset, "dataset")
    cfg.model = rebuild(cfg.model, "model")
    cfg.actions = rebuild(cfg.actions, "actions")
    cfg.sensor = rebuild(cfg.sensor, "sensor")
    cfg.reward = rebuild(cfg.reward, "reward")
    cfg.gae = rebuild(cfg.gae, "gae")
    cfg.ppo = rebuild(cfg.ppo, "ppo")
    for key, value in updates.get("run", {}).items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def default_config_text() -> str:
    """A fully commented config with every default value spelled out."""
    cfg = RunConfig()
    out = []
    for section, obj in (("world", cfg.world), ("pipeline", cfg.pipeline),
                         ("dataset", cfg.dataset), ("model", cfg.model),
                         ("actions", cfg.actions), ("sensor", cfg.sensor),
                         ("reward", cfg.reward), ("gae", cfg.gae),
                         ("ppo", cfg.ppo)):
        out.append(f"[{section}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = f"{v[0]}, {v[1]}"
            out.append(f"{f.name} = {v}")
        out.append("")
    out.append("[run]")
    out.append(f"success_radius = {cfg.success_radius}")
    out.append(f"max_steps = {cfg.max_steps}")
    out.append(f"train_seed = {cfg.train_seed}")
    return "\n".join(out) + "\n"
