"""Run configuration: nested dataclasses loaded from / dumped to JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .policy import PPOConfig
from .sampling import SamplerConfig
from .tcm import AGGREGATORS


class ConfigError(ValueError):
    pass


@dataclass
class LossSchedule:
    lambda_stl_start: float = 1.0
    lambda_stl_end: float = 0.1
    lambda_sia_start: float = 0.1
    lambda_sia_end: float = 0.5
    total_epochs: Optional[int] = None  # None: follow optim.epochs

    def validate(self) -> None:
        vals = (self.lambda_stl_start, self.lambda_stl_end, self.lambda_sia_start, self.lambda_sia_end)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ConfigError("schedule lambdas must be finite and >= 0")
        if self.total_epochs is not None and self.total_epochs < 1:
            raise ConfigError("schedule.total_epochs must be >= 1")


def cosine_value(start: float, end: float, epoch: float, total: int) -> float:
    if epoch == 0:
        return float(start)
    if epoch == total:
        return float(end)
    return end + (start - end) * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


def lambda_at(schedule: LossSchedule, epoch: float, total_epochs: Optional[int] = None) -> tuple[float, float]:
    total = schedule.total_epochs or total_epochs
    if not total or total < 1:
        raise ValueError("schedule needs total_epochs >= 1")
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return (
        cosine_value(schedule.lambda_stl_start, schedule.lambda_stl_end, epoch, total),
        cosine_value(schedule.lambda_sia_start, schedule.lambda_sia_end, epoch, total),
    )


@dataclass
class ModelConfig:
    dim: Optional[int] = None  # None: the bags' feature dimension
    heads: int = 4
    policy_hidden: int = 64
    aggregator: str = "cls"
    max_positions: Optional[int] = None


@dataclass
class ActionConfig:
    sigma: float = 0.1


@dataclass
class RewardConfig:
    r_star: float = 1.0
    use_penalty: bool = True


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 300
    batch_size: int = 1


@dataclass
class RunConfig:
    manifest: Optional[str] = None
    out_dir: str = "runs/default"
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    action: ActionConfig = field(default_factory=ActionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    schedule: LossSchedule = field(default_factory=LossSchedule)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def validate(self) -> "RunConfig":
        try:
            self.sampler.validate()
            self.ppo.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.schedule.validate()
        if self.optim.epochs < 1:
            raise ConfigError("optim.epochs must be >= 1")
        if self.optim.batch_size != 1:
            raise ConfigError("only optim.batch_size = 1 is supported")
        if self.optim.lr <= 0 or self.optim.weight_decay < 0:
            raise ConfigError("optim.lr must be > 0 and weight_decay >= 0")
        if self.model.aggregator not in AGGREGATORS:
            raise ConfigError(f"model.aggregator must be one of {AGGREGATORS}")
        if self.model.heads < 1 or self.model.policy_hidden < 1:
            raise ConfigError("model.heads and model.policy_hidden must be >= 1")
        if self.model.dim is not None and self.model.dim % self.model.heads:
            raise ConfigError("model.dim must be divisible by model.heads")
        if self.action.sigma <= 0:
            raise ConfigError("action.sigma must be > 0")
        return self

    @property
    def total_epochs(self) -> int:
        return self.schedule.total_epochs or self.optim.epochs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampler"]["beta_grid"] = list(d["sampler"]["beta_grid"])
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"sampler.scheme": "GMSS"})``."""
        d = self.to_dict()
        for key, value in changes.items():
            set_dotted(d, key, value)
        return RunConfig.from_dict(d)


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get(name) if cls is RunConfig else None
        kwargs[name] = _build(sub, value) if sub is not None else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_NESTED = {
    "sampler": SamplerConfig,
    "model": ModelConfig,
    "ppo": PPOConfig,
    "action": ActionConfig,
    "reward": RewardConfig,
    "schedule": LossSchedule,
    "optim": OptimConfig,
}
