"""Simulation config: dataclasses plus a strict JSON loader.

Every validation failure raises :class:`ConfigError` whose ``key`` is the
dotted path of the offending entry (``"rounds"``, ``"train.step_size"``,
``"tasks[1].loss"``, ...).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

from .contract import TaskContract
from .errors import ConfigError, ContractViolation
from .fl_core import LossKind, TrainConfig
from .reputation import ReputationParams
from .sharding import STRATEGIES


@dataclass(frozen=True)
class AdversaryMix:
    label_flip: float = 0.0
    free_rider: float = 0.0
    lazy: float = 0.0
    flip_fraction: float = 1.0
    participation_probability: float = 0.5

    def fractions(self) -> dict[str, float]:
        return {"label_flip": self.label_flip, "free_rider": self.free_rider, "lazy": self.lazy}


@dataclass(frozen=True)
class DataConfig:
    feature_dim: int = 4
    train_samples: int = 100
    holdout_samples: int = 50
    test_samples: int = 4000
    separation: float = 6.0
    data_types: tuple[str, ...] = ("tabular",)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    device_count: int = 20
    shard_count: int = 4
    strategy: str = "random"
    rounds: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    reputation: ReputationParams = field(default_factory=ReputationParams)
    tolerance: float = 0.05
    quorum: float = 2 / 3
    tasks: tuple[TaskContract, ...] = ()
    adversaries: AdversaryMix = field(default_factory=AdversaryMix)
    data: DataConfig = field(default_factory=DataConfig)
    gating: bool = True
    reshard_every_round: bool = False
    promote_every_round: bool = False
    fuse_across_shards: bool = True
    reward_pool: float = 100.0

    @property
    def quorum_fraction(self) -> Fraction:
        return Fraction(self.quorum).limit_denominator(10**6)

    def resolved_tasks(self) -> tuple[TaskContract, ...]:
        """Configured tasks, or one default classification task per shard."""
        if self.tasks:
            return self.tasks
        types = self.data.data_types
        return tuple(
            TaskContract(
                task_id=j,
                publisher=f"publisher-{j}",
                param_dim=self.data.feature_dim + 1,
                loss=LossKind.LOGISTIC_BINARY,
                required_data_type=types[j % len(types)],
                target_accuracy=1.0,
                max_rounds=self.rounds,
                reward_pool=self.reward_pool,
            )
            for j in range(self.shard_count)
        )

    def with_overrides(self, *, seed: int | None = None, gating: bool | None = None) -> "SimConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if gating is not None:
            changes["gating"] = gating
        return replace(self, **changes) if changes else self


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def validate(cfg: SimConfig) -> SimConfig:
    def need(cond: bool, key: str, msg: str) -> None:
        if not cond:
            raise ConfigError(key, msg)

    need(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    need(_is_int(cfg.rounds) and cfg.rounds >= 1, "rounds", "must be an integer >= 1")
    need(_is_int(cfg.shard_count) and cfg.shard_count >= 1, "shard_count", "must be an integer >= 1")
    need(
        _is_int(cfg.device_count) and cfg.device_count >= cfg.shard_count,
        "device_count",
        "must be an integer >= shard_count",
    )
    need(cfg.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
    need(_is_num(cfg.tolerance) and cfg.tolerance >= 0, "tolerance", "must be a number >= 0")
    need(_is_num(cfg.quorum) and 0 < cfg.quorum <= 1, "quorum", "must be in (0, 1]")
    need(_is_num(cfg.reward_pool) and cfg.reward_pool >= 0, "reward_pool", "must be >= 0")
    for name in ("gating", "reshard_every_round", "promote_every_round", "fuse_across_shards"):
        need(isinstance(getattr(cfg, name), bool), name, "must be true or false")

    mix = cfg.adversaries
    for name, value in mix.fractions().items():
        need(_is_num(value) and 0 <= value <= 1, f"adversaries.{name}", "must be in [0, 1]")
    total = sum(mix.fractions().values())
    need(total <= 1 + 1e-12, "adversaries", f"behaviour fractions sum to {total:g} > 1")
    need(
        _is_num(mix.flip_fraction) and 0 < mix.flip_fraction <= 1,
        "adversaries.flip_fraction",
        "must be in (0, 1]",
    )
    need(
        _is_num(mix.participation_probability) and 0 <= mix.participation_probability < 1,
        "adversaries.participation_probability",
        "must be in [0, 1)",
    )

    d = cfg.data
    need(_is_int(d.feature_dim) and d.feature_dim >= 1, "data.feature_dim", "must be >= 1")
    for name in ("train_samples", "holdout_samples", "test_samples"):
        need(_is_int(getattr(d, name)) and getattr(d, name) >= 1, f"data.{name}", "must be >= 1")
    need(_is_num(d.separation) and d.separation >= 0, "data.separation", "must be >= 0")
    need(
        len(d.data_types) >= 1 and all(isinstance(t, str) and t for t in d.data_types),
        "data.data_types",
        "must be a non-empty list of non-empty strings",
    )

    ids = set()
    for k, task in enumerate(cfg.tasks):
        key = f"tasks[{k}]"
        need(task.task_id not in ids, f"{key}.task_id", "duplicate task id")
        ids.add(task.task_id)
        need(
            task.loss is LossKind.LOGISTIC_BINARY,
            f"{key}.loss",
            "the simulator validates updates by accuracy, so tasks must be logistic_binary",
        )
    return cfg


# --- dict <-> dataclass ------------------------------------------------------

def _build(cls, raw: Any, key: str, convert=None):
    if not isinstance(raw, dict):
        raise ConfigError(key, "must be an object")
    known = {f.name for f in fields(cls)}
    for name in raw:
        if name not in known:
            raise ConfigError(f"{key}.{name}" if key else name, "unknown key")
    values = dict(raw)
    if convert:
        values = convert(values)
    try:
        return cls(**values)
    except ContractViolation as exc:
        msg = str(exc)
        field_name = next((n for n in known if msg.startswith(n)), None)
        raise ConfigError(f"{key}.{field_name}" if field_name else key, msg) from None
    except TypeError as exc:
        raise ConfigError(key, str(exc)) from None


def _loss(value, key: str) -> LossKind:
    try:
        return LossKind(value)
    except ValueError:
        raise ConfigError(key, f"unknown loss {value!r}") from None


def config_from_dict(raw: Any) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {f.name for f in fields(SimConfig)}
    for name in raw:
        if name not in known:
            raise ConfigError(name, "unknown key")
    values = dict(raw)

    if "train" in values:
        def train_conv(v):
            if "loss" in v:
                v["loss"] = _loss(v["loss"], "train.loss")
            return v
        values["train"] = _build(TrainConfig, values["train"], "train", train_conv)
    if "reputation" in values:
        values["reputation"] = _build(ReputationParams, values["reputation"], "reputation")
    if "adversaries" in values:
        values["adversaries"] = _build(AdversaryMix, values["adversaries"], "adversaries")
    if "data" in values:
        def data_conv(v):
            if "data_types" in v:
                if not isinstance(v["data_types"], list):
                    raise ConfigError("data.data_types", "must be a list")
                v["data_types"] = tuple(v["data_types"])
            return v
        values["data"] = _build(DataConfig, values["data"], "data", data_conv)
    if "tasks" in values:
        if not isinstance(values["tasks"], list):
            raise ConfigError("tasks", "must be a list")
        tasks = []
        for k, t in enumerate(values["tasks"]):
            key = f"tasks[{k}]"

            def task_conv(v, key=key):
                if "loss" in v:
                    v["loss"] = _loss(v["loss"], f"{key}.loss")
                return v
            tasks.append(_build(TaskContract, t, key, task_conv))
        values["tasks"] = tuple(tasks)
    try:
        cfg = SimConfig(**values)
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    return validate(cfg)


def _jsonable(value):
    if isinstance(value, LossKind):
        return value.value
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def config_to_dict(cfg: SimConfig, *, resolve_tasks: bool = True) -> dict:
    """Plain-JSON view with every default materialised."""
    out = _jsonable(asdict(cfg))
    if resolve_tasks:
        out["tasks"] = [_jsonable(asdict(t)) for t in cfg.resolved_tasks()]
    return out


class ConfigSyntaxError(Exception):
    pass


def read_config_file(path: str | Path) -> SimConfig:
    """Load a config, or the ``config`` section of a run manifest.

    Raises ``OSError`` for unreadable files, :class:`ConfigSyntaxError` for
    malformed JSON and :class:`ConfigError` for invalid content.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "artifact_version" in raw and "config" in raw:
        raw = raw["config"]
    return config_from_dict(raw)
