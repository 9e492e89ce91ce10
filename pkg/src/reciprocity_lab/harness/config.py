"""Experiment configuration: YAML in, validated dataclasses out.

Every mapping is checked against the fields of its dataclass; unknown keys are
errors.  The ``environment`` block holds ``name`` plus any field of that
environment's config class.
"""
from __future__ import annotations

import copy
import dataclasses
import types
import typing
from pathlib import Path

import yaml

from ..envs import ENVIRONMENTS, EnvConfig
from ..errors import ConfigError
from ..learner import LearnerConfig
from ..reciprocity import NICENESS_SOURCES, ReciprocityConfig

INNOVATOR, IMITATOR = "innovator", "imitator"


@dataclasses.dataclass
class AgentSpec:
    kind: str = INNOVATOR
    niceness_source: str | None = None  # imitators; None -> reciprocity.niceness_source
    imitates: int | None = None  # imitators; None -> first innovator in the roster
    learning: bool = True
    checkpoint: str | None = None  # initial policy parameters
    learning_rate: float | None = None


@dataclasses.dataclass
class AblationFlags:
    kl_only: bool = False
    intrinsic_only: bool = False
    frozen_innovator_copies: bool = False


@dataclasses.dataclass
class ExperimentConfig:
    environment: EnvConfig
    env_name: str
    roster: list[AgentSpec]
    learner: LearnerConfig = dataclasses.field(default_factory=LearnerConfig)
    reciprocity: ReciprocityConfig = dataclasses.field(default_factory=ReciprocityConfig)
    seeds: list[int] = dataclasses.field(default_factory=lambda: [0])
    episodes: int = 1000
    eval_every: int = 100  # episodes per metrics row
    ablation: AblationFlags = dataclasses.field(default_factory=AblationFlags)
    output_dir: str = "runs/experiment"
    trace_log_episodes: int = 0  # frozen episodes logged after training for probes
    eval_episodes: int = 0  # frozen evaluation before training (row 0 of the metrics file)

    def validate(self) -> None:
        self.environment.validate()
        self.learner.validate()
        self.reciprocity.validate()
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        n = len(self.roster)
        if n != self.environment.num_agents:
            raise ConfigError(
                f"roster has {n} agents but the {self.env_name} environment is configured for "
                f"{self.environment.num_agents}"
            )
        if self.env_name == "coins" and n != 2:
            raise ConfigError("Coins needs exactly 2 agents")
        innovators = [i for i, a in enumerate(self.roster) if a.kind == INNOVATOR]
        for i, agent in enumerate(self.roster):
            if agent.kind not in (INNOVATOR, IMITATOR):
                raise ConfigError(f"agent {i}: kind must be 'innovator' or 'imitator'")
            if agent.kind == IMITATOR:
                if not innovators:
                    raise ConfigError("imitators need an innovator in the roster")
                if agent.imitates is not None and agent.imitates not in innovators:
                    raise ConfigError(f"agent {i} imitates agent {agent.imitates}, which is not an innovator")
                if agent.niceness_source is not None and agent.niceness_source not in NICENESS_SOURCES:
                    raise ConfigError(f"agent {i}: niceness_source must be one of {NICENESS_SOURCES}")
            elif agent.niceness_source is not None or agent.imitates is not None:
                raise ConfigError(f"agent {i}: innovators take no niceness_source/imitates")
        if sum([self.ablation.kl_only, self.ablation.intrinsic_only]) > 1:
            raise ConfigError("choose at most one of kl_only / intrinsic_only")
        B = self.learner.num_envs
        if self.episodes < 0 or self.episodes % B:
            raise ConfigError(f"episodes ({self.episodes}) must be a non-negative multiple of num_envs ({B})")
        if self.eval_every <= 0 or self.eval_every % B:
            raise ConfigError(f"eval_every ({self.eval_every}) must be a positive multiple of num_envs ({B})")
        for name in ("trace_log_episodes", "eval_episodes"):
            value = getattr(self, name)
            if value < 0 or value % B:
                raise ConfigError(f"{name} ({value}) must be a non-negative multiple of num_envs ({B})")

    def source_of(self, agent_id: int) -> str:
        return self.roster[agent_id].niceness_source or self.reciprocity.niceness_source

    def target_of(self, agent_id: int) -> int:
        spec = self.roster[agent_id]
        if spec.imitates is not None:
            return spec.imitates
        return next(i for i, a in enumerate(self.roster) if a.kind == INNOVATOR)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.seeds = [int(s) for s in seeds]
        return out

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        env = data.pop("environment")
        data["environment"] = {"name": data.pop("env_name"), **env}
        return data


def _resolve_type(tp):
    """Strip Optional[...] and return (origin, args) for list/dataclass coercion."""
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return _resolve_type(args[0])
    return tp


def from_dict(cls, data, where: str = "config"):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        tp = _resolve_type(hints[key])
        if dataclasses.is_dataclass(tp) and value is not None:
            value = from_dict(tp, value, f"{where}.{key}")
        elif tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif tp is float and isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{where}.{key}: expected a number, got {value!r}") from None
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def build_environment_config(block: dict, roster_size: int | None = None) -> tuple[str, EnvConfig]:
    if not isinstance(block, dict) or "name" not in block:
        raise ConfigError("environment: a mapping with a 'name' key is required")
    block = dict(block)
    name = block.pop("name")
    if name not in ENVIRONMENTS:
        raise ConfigError(f"environment: unknown name {name!r}; choose from {sorted(ENVIRONMENTS)}")
    config_cls = ENVIRONMENTS[name][0]
    if roster_size is not None and "num_agents" not in block:
        block["num_agents"] = roster_size
    return name, from_dict(config_cls, block, "environment")


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    data = dict(data)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"env_name"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    roster_raw = data.pop("roster", None)
    if not roster_raw:
        raise ConfigError("config: roster must list at least one agent")
    roster = [from_dict(AgentSpec, a, f"roster[{i}]") for i, a in enumerate(roster_raw)]
    env_name, env_config = build_environment_config(data.pop("environment", None), len(roster))
    rest = from_dict(_Rest, data, "config")
    config = ExperimentConfig(environment=env_config, env_name=env_name, roster=roster,
                              **{f.name: getattr(rest, f.name) for f in dataclasses.fields(_Rest)})
    config.validate()
    return config


@dataclasses.dataclass
class _Rest:
    learner: LearnerConfig = dataclasses.field(default_factory=LearnerConfig)
    reciprocity: ReciprocityConfig = dataclasses.field(default_factory=ReciprocityConfig)
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    episodes: int = 1000
    eval_every: int = 100
    ablation: AblationFlags = dataclasses.field(default_factory=AblationFlags)
    output_dir: str = "runs/experiment"
    trace_log_episodes: int = 0
    eval_episodes: int = 0


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
