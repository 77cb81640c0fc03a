"""Engine configuration.

Defaults follow the published training setup: K=3 turns, coarse 64 frames at
16 tokens, fine 16 frames at 64 tokens, group size 8, batch 32, KL beta 0.005,
pseudo-reward gamma 0.1, sampling (1.0, 0.9, 50, 1.0) for training and greedy
for evaluation.

ASSUMPTION: ``clip_eps`` defaults to 0.2. The published setup never states the
clipping range; 0.2 is the usual PPO/GRPO value.

Config files are JSON or YAML with the same nesting as :class:`EngineConfig`
(see ``EngineConfig.to_dict``); unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .policy.base import SamplingParams
from .prompts import TEMPLATE_VERSION

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ViewConfig:
    coarse_frames: int = 64
    coarse_tokens: int = 16
    fine_frames: int = 16
    fine_tokens: int = 64

    @classmethod
    def high_res(cls) -> ViewConfig:
        return cls(64, 128, 16, 512)


@dataclass(frozen=True)
class GateConfig:
    gamma: float = 0.1
    gate_enabled: bool = True
    # ablation switches
    use_soft: bool = True
    use_hard: bool = True
    use_grounding: bool = True
    use_pseudo: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2  # assumption, see module docstring
    kl_beta: float = 0.005
    batch_size: int = 32
    std: str = "population"  # or "sample"
    kl_estimator: str = "k3"  # exp(d) - d - 1; "k1" is the plain log-ratio
    resample_budget: int = 8
    kl_clip: float | None = 10.0  # cap on each per-trajectory KL term; None disables

    def __post_init__(self):
        if self.kl_clip is not None and not self.kl_clip > 0:
            raise ConfigError("kl_clip must be positive or null")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if not self.clip_eps > 0:
            raise ConfigError("clip_eps must be positive")
        if self.kl_beta < 0:
            raise ConfigError("kl_beta must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.std not in ("population", "sample"):
            raise ConfigError("std must be 'population' or 'sample'")
        if self.kl_estimator not in ("k3", "k1"):
            raise ConfigError("kl_estimator must be 'k3' or 'k1'")
        if self.resample_budget < 0:
            raise ConfigError("resample_budget must be >= 0")


@dataclass(frozen=True)
class ToyConfig:
    windows: int = 8
    features: tuple[str, ...] = ()  # empty: all toy features
    step_size: float = 2.0
    fd_eps: float = 1e-4
    zoom_hides_gist: bool = False
    frozen: tuple[str, ...] = ()  # features whose weights training leaves unchanged


@dataclass(frozen=True)
class CurriculumConfig:
    stage: str = "two_stage"  # "stage1" | "stage2" | "two_stage"
    stage1_steps: int = 50
    max_degenerate_batches: int = 20


@dataclass(frozen=True)
class EngineConfig:
    K: int = 3
    views: ViewConfig = field(default_factory=ViewConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    train_sampling: SamplingParams = field(default_factory=SamplingParams.training)
    eval_sampling: SamplingParams = field(default_factory=SamplingParams.greedy)
    toy: ToyConfig = field(default_factory=ToyConfig)
    eval_retries: int = 3
    workers: int = 1
    seed: int = 0
    template_version: str = TEMPLATE_VERSION

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.eval_retries < 0:
            raise ConfigError("eval_retries must be >= 0")
        v = self.views
        if not (v.coarse_frames > v.fine_frames and v.coarse_tokens < v.fine_tokens):
            log.warning(
                "unusual view budgets: expected coarse frames > fine frames and coarse tokens < fine tokens, got %s", v
            )
        if self.template_version != TEMPLATE_VERSION:
            raise ConfigError(f"template version {self.template_version!r} not available (have {TEMPLATE_VERSION!r})")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes: Any) -> EngineConfig:
        """Override fields; nested sections take dotted keys, e.g. ``{"grpo.kl_beta": 0.0}``."""
        return from_dict(_merge(self.to_dict(), changes))


def _merge(base: dict, overrides: dict) -> dict:
    out = json.loads(json.dumps(base))
    for key, value in overrides.items():
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config section {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(node[parts[-1]], dict) and isinstance(value, dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return out


def _check_scalar(cls, name: str, value, path: str):
    """Coerce ``value`` to the kind of the field's default (bool, int, float, str); others pass through."""
    f = next(f for f in dataclasses.fields(cls) if f.name == name)
    default = f.default if f.default is not dataclasses.MISSING else None
    where = f"{path}{name}"
    if value is None:
        if default is None or "None" in str(f.type):
            return None
        raise ConfigError(f"{where}: null not allowed")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{path}{name}.")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = _check_scalar(cls, name, value, path)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path or 'config'}: {e}") from e


_SECTIONS = {
    (EngineConfig, "views"): ViewConfig,
    (EngineConfig, "grpo"): GrpoConfig,
    (EngineConfig, "gate"): GateConfig,
    (EngineConfig, "curriculum"): CurriculumConfig,
    (EngineConfig, "train_sampling"): SamplingParams,
    (EngineConfig, "eval_sampling"): SamplingParams,
    (EngineConfig, "toy"): ToyConfig,
}


def from_dict(data: dict) -> EngineConfig:
    return _build(EngineConfig, data, "")


def load_config(path: str | Path) -> EngineConfig:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return from_dict(data)
