"""Run configuration: a YAML document validated into frozen dataclasses.

Every run starts from ``presets/defaults.yaml``; a config may name a
``preset`` to layer on top of it, and its own keys override both. Unknown
keys are rejected.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class GridConfig:
    size: int
    n_terms: int
    c: float
    d: float
    beta: float
    floor: float


@dataclass(frozen=True)
class SequenceConfig:
    length: int
    num_modes: int
    mode_seed: int
    modes_file: Optional[str]
    mode_radius: Optional[int]

    @property
    def radius(self) -> int:
        return self.mode_radius if self.mode_radius is not None else math.ceil(self.length / 10)


@dataclass(frozen=True)
class EnvConfig:
    kind: str
    grid: GridConfig
    sequence: SequenceConfig


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple
    activation: str
    prior_width_ratio: float


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    temperature: float
    epsilon: float


@dataclass(frozen=True)
class EnsembleConfig:
    size: int
    prior_weight: float
    bootstrap_p: float
    shared_backward: bool


@dataclass(frozen=True)
class OptimConfig:
    model_lr: float
    logz_lr: float
    beta1: float
    beta2: float
    eps: float
    grad_clip: Optional[float]


@dataclass(frozen=True)
class BudgetConfig:
    batch_size: int
    total_trajectories: int


@dataclass(frozen=True)
class EvalConfig:
    every: int
    window: int
    exact: bool


@dataclass(frozen=True)
class CheckpointConfig:
    every: int


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    env: EnvConfig
    model: ModelConfig
    strategy: StrategyConfig
    ensemble: EnsembleConfig
    optim: OptimConfig
    budget: BudgetConfig
    eval: EvalConfig
    checkpoint: CheckpointConfig

    @property
    def num_steps(self) -> int:
        return math.ceil(self.budget.total_trajectories / self.budget.batch_size)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def env_hash(self) -> str:
        return _hash(_plain(dataclasses.asdict(self.env)))

    def content_hash(self) -> str:
        return _hash(self.to_dict())


@dataclass(frozen=True)
class RunConfig:
    label: str
    output_dir: str
    train: TrainConfig

    def to_dict(self) -> dict:
        d = {"label": self.label, "output_dir": self.output_dir}
        d.update(self.train.to_dict())
        return d


STRATEGIES = ("on_policy", "tempering", "epsilon_noisy", "thompson")
ENV_KINDS = ("grid", "sequence")
ACTIVATIONS = ("leaky_relu", "relu", "tanh", "linear")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# ------------------------------------------------------------------ loading


def preset_names() -> list[str]:
    root = resources.files("tsgfn") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml") and p.name != "defaults.yaml")


def preset_text(name: str) -> str:
    path = resources.files("tsgfn") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text(encoding="utf-8")


def _load_yaml(text: str, source: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def set_dotted(d: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(d)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p} is not a section")
    node[parts[-1]] = value
    return out


def resolve_dict(data: dict, source: str = "<config>") -> dict:
    """Merge ``data`` over its preset (if any) and the defaults."""
    merged = _load_yaml(preset_text("defaults"), "defaults.yaml")
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        layer = _load_yaml(preset_text(preset), f"preset {preset}")
        layer.pop("preset", None)
        merged = deep_merge(merged, layer)
    return deep_merge(merged, data)


def make_run_config(data: dict | None = None, preset: str | None = None, source: str = "<config>",
                    **dotted_overrides) -> RunConfig:
    data = dict(data or {})
    if preset is not None:
        data.setdefault("preset", preset)
    for key, val in dotted_overrides.items():
        data = set_dotted(data, key.replace("__", "."), val)
    return build_run_config(resolve_dict(data, source), source)


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    data = _load_yaml(text, str(path))
    for key, val in (overrides or {}).items():
        data = set_dotted(data, key, val)
    return build_run_config(resolve_dict(data, str(path)), str(path))


def make_train_config(preset: str | None = None, **dotted_overrides) -> TrainConfig:
    return make_run_config(preset=preset, **dotted_overrides).train


# --------------------------------------------------------------- validation


def _build(cls, data, path: str, problems: list):
    if not isinstance(data, dict):
        problems.append(f"{path or '<root>'}: expected a mapping")
        return None
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    for key in data:
        if key not in names:
            problems.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name in names:
        where = f"{path}.{name}" if path else name
        if name not in data:
            problems.append(f"{where}: missing")
            continue
        kwargs[name] = _coerce(hints[name], data[name], where, problems)
    if len(kwargs) != len(names):
        return None
    return cls(**kwargs)


def _coerce(tp, value, where: str, problems: list):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where, problems)
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where, problems)
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            problems.append(f"{where}: expected a list")
            return ()
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            problems.append(f"{where}: expected true/false, got {value!r}")
        return bool(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            problems.append(f"{where}: expected an integer, got {value!r}")
            return 0
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}: expected a number, got {value!r}")
            return 0.0
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            problems.append(f"{where}: expected a string, got {value!r}")
        return str(value)
    return value


def _check(cfg: TrainConfig, problems: list) -> None:
    e, s, ens, o, b, ev = cfg.env, cfg.strategy, cfg.ensemble, cfg.optim, cfg.budget, cfg.eval
    if e.kind not in ENV_KINDS:
        problems.append(f"env.kind: must be one of {ENV_KINDS}")
    if e.grid.size < 2:
        problems.append("env.grid.size: must be >= 2")
    if e.grid.n_terms < 1:
        problems.append("env.grid.n_terms: must be >= 1")
    if not e.grid.c < e.grid.d:
        problems.append("env.grid: need c < d")
    if e.grid.beta <= 0 or e.grid.floor <= 0:
        problems.append("env.grid: beta and floor must be > 0")
    if e.sequence.length < 1:
        problems.append("env.sequence.length: must be >= 1")
    if e.kind == "sequence" and e.sequence.modes_file is None:
        if not 1 <= e.sequence.num_modes <= 2 ** e.sequence.length:
            problems.append("env.sequence.num_modes: must lie in [1, 2^length]")
    if e.sequence.mode_radius is not None and e.sequence.mode_radius < 0:
        problems.append("env.sequence.mode_radius: must be >= 0")
    if not cfg.model.hidden or any((not isinstance(h, int)) or h < 1 for h in cfg.model.hidden):
        problems.append("model.hidden: needs a non-empty list of positive integers")
    if cfg.model.activation not in ACTIVATIONS:
        problems.append(f"model.activation: must be one of {ACTIVATIONS}")
    if not cfg.model.prior_width_ratio > 0:
        problems.append("model.prior_width_ratio: must be > 0")
    if s.kind not in STRATEGIES:
        problems.append(f"strategy.kind: must be one of {STRATEGIES}")
    if not s.temperature > 0:
        problems.append("strategy.temperature: must be > 0")
    if not 0 <= s.epsilon <= 1:
        problems.append("strategy.epsilon: must lie in [0, 1]")
    if ens.size < 1:
        problems.append("ensemble.size: must be >= 1")
    if s.kind != "thompson" and ens.size != 1:
        problems.append("ensemble.size: only the thompson strategy uses an ensemble (set size: 1)")
    if ens.prior_weight < 0:
        problems.append("ensemble.prior_weight: must be >= 0")
    if not 0 <= ens.bootstrap_p <= 1:
        problems.append("ensemble.bootstrap_p: must lie in [0, 1]")
    if o.model_lr <= 0 or o.logz_lr <= 0:
        problems.append("optim: learning rates must be > 0")
    if o.grad_clip is not None and o.grad_clip <= 0:
        problems.append("optim.grad_clip: must be > 0 or null")
    if b.batch_size < 1:
        problems.append("budget.batch_size: must be >= 1")
    if b.total_trajectories < 0:
        problems.append("budget.total_trajectories: must be >= 0")
    if ev.every < 1:
        problems.append("eval.every: must be >= 1")
    if ev.window < 1:
        problems.append("eval.window: must be >= 1")
    if cfg.checkpoint.every < 0 or (cfg.checkpoint.every and cfg.checkpoint.every % ev.every):
        problems.append("checkpoint.every: must be 0 or a multiple of eval.every")


def build_run_config(data: dict, source: str = "<config>") -> RunConfig:
    problems: list[str] = []
    data = dict(data)
    data.pop("preset", None)
    label = data.pop("label", None)
    output_dir = data.pop("output_dir", None)
    if not isinstance(label, str) or not label:
        problems.append("label: must be a non-empty string")
    if not isinstance(output_dir, str) or not output_dir:
        problems.append("output_dir: must be a non-empty string")
    train = _build(TrainConfig, data, "", problems)
    if train is not None and not problems:
        _check(train, problems)
    if problems:
        raise ConfigError([f"{source}: {p}" for p in problems])
    return RunConfig(label, output_dir, train)


def dump_yaml(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=False)


def config_from_resolved(d: dict[str, Any]) -> RunConfig:
    return build_run_config(d, "<resolved>")
