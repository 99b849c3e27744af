"""Hyperparameters and experiment configuration.

Config files are flat ``key = value`` text with dotted section prefixes::

    maze = grid-corridor
    algo = saw
    dataset.mode = navigate
    dataset.n_traj = 3000
    hp.beta = 3.0
    seeds = 0, 1, 2

Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ALGOS = ("gcbc", "gcivl_awr", "hiql", "gcwae", "ris", "saw")


@dataclass
class Hyperparams:
    tau: float = 0.7
    gamma: float = 0.99
    alpha: float = 3.0
    beta: float = 3.0
    beta_high: float = 3.0
    beta_low: float = 3.0
    beta_ris: float = 100.0
    k: int = 25
    w_max: float = 100.0
    batch: int = 1024
    # step sizes act on the batch-mean loss
    lr_v: float = 300.0
    lr_pi: float = 100.0
    value_steps: int = 20000
    subpolicy_steps: int = 10000
    high_steps: int = 10000
    policy_steps: int = 20000
    target_period: int = 100
    # None starts the value table at the pessimistic bound -1 / (1 - gamma)
    v_init: float | None = None
    target_soft: float = 0.0
    value_goal_mix: tuple = (0.2, 0.5, 0.3)
    policy_goal_mix: tuple = (0.0, 1.0, 0.0)
    include_current_goal: bool = True
    saw_awr_term: bool = True
    saw_kl_term: bool = True

    def __post_init__(self):
        self.value_goal_mix = tuple(float(x) for x in self.value_goal_mix)
        self.policy_goal_mix = tuple(float(x) for x in self.policy_goal_mix)
        self.validate()

    def validate(self) -> None:
        if not 0.5 <= self.tau < 1.0:
            raise ConfigError(f"tau must lie in [0.5, 1), got {self.tau}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("alpha", "beta", "beta_high", "beta_low", "beta_ris"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.w_max <= 0:
            raise ConfigError("w_max must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be positive")
        if self.lr_v <= 0 or self.lr_pi <= 0:
            raise ConfigError("learning rates must be positive")
        for name in ("value_steps", "subpolicy_steps", "high_steps", "policy_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.target_period < 1:
            raise ConfigError("target_period must be at least 1")
        if not 0.0 <= self.target_soft <= 1.0:
            raise ConfigError("target_soft must lie in [0, 1]")
        for name in ("value_goal_mix", "policy_goal_mix"):
            mix = getattr(self, name)
            if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
                raise ConfigError(f"{name} must be three non-negative weights summing to 1")

    @property
    def value_init(self) -> float:
        return -1.0 / (1.0 - self.gamma) if self.v_init is None else float(self.v_init)

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)


@dataclass
class DatasetConfig:
    mode: str = "navigate"
    n_traj: int = 1000
    max_len: int = 1000
    epsilon: float = 0.2
    seed: int = 0
    stitch_len: int | None = None
    path: str | None = None


@dataclass
class EvalConfig:
    tasks: str | None = None
    episodes_per_pair: int = 1
    max_steps: int | None = None
    argmax: bool = True
    every: int = 2000


@dataclass
class ExperimentConfig:
    maze: str = "grid-medium"
    algo: str = "saw"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    hp: Hyperparams = field(default_factory=Hyperparams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: str = "runs/default"
    seeds: list = field(default_factory=lambda: [0])
    log_every: int = 100

    def validate(self) -> None:
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algo {self.algo!r}; expected one of {ALGOS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.log_every < 1 or self.eval.every < 1:
            raise ConfigError("logging cadences must be positive")
        if self.eval.episodes_per_pair < 1:
            raise ConfigError("episodes_per_pair must be positive")
        self.hp.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


SECTIONS = {"dataset": DatasetConfig, "hp": Hyperparams, "eval": EvalConfig}


def _coerce(value: str, current, name: str):
    value = value.strip()
    try:
        if isinstance(current, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, (tuple, list)):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if name == "seeds":
                return [int(v) for v in items]
            return tuple(float(v) for v in items)
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {value!r}") from None
    if value.lower() in ("none", ""):
        return None
    # fields whose default is None carry no type to coerce toward
    if name == "hp.v_init":
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"cannot parse {name} = {value!r}") from None
    if name in ("dataset.stitch_len", "eval.max_steps"):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"cannot parse {name} = {value!r}") from None
    return value


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``key=value`` strings (or ``(key, value)`` pairs) in order."""
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(SECTIONS)
    sub = {name: {} for name in SECTIONS}
    for item in pairs:
        key, value = item.split("=", 1) if isinstance(item, str) else item
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            fields = {f.name for f in dataclasses.fields(SECTIONS[section])}
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            obj = getattr(cfg, section)
            sub[section][name] = _coerce(str(value), getattr(obj, name), key)
            if section != "hp":
                setattr(obj, name, sub[section][name])
        elif key in top:
            setattr(cfg, key, _coerce(str(value), getattr(cfg, key), key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if sub["hp"]:
        cfg.hp = cfg.hp.replace(**sub["hp"])
    cfg.validate()
    return cfg


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return apply_overrides(base or ExperimentConfig(), pairs)


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    cfg = parse_config_text(path.read_text())
    return apply_overrides(cfg, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {_fmt(getattr(value, g.name))}")
        else:
            lines.append(f"{f.name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
