"""Gridworld environments: the shared engine plus Coins, Cleanup and Harvest."""
from __future__ import annotations

from ..errors import ConfigError
from .cleanup import CleanupConfig, CleanupEnv
from .coins import CoinsConfig, CoinsEnv
from .grid import (
    EnvConfig,
    FloorConfig,
    FloorEnv,
    GridEnv,
    GridWorld,
    observe,
    render_ascii,
    step,
)
from .harvest import HarvestConfig, HarvestEnv

ENVIRONMENTS = {
    "coins": (CoinsConfig, CoinsEnv),
    "cleanup": (CleanupConfig, CleanupEnv),
    "harvest": (HarvestConfig, HarvestEnv),
    "floor": (FloorConfig, FloorEnv),
}


def make_env(config: EnvConfig) -> GridEnv:
    for config_cls, env_cls in ENVIRONMENTS.values():
        if type(config) is config_cls:
            return env_cls(config)
    raise ConfigError(f"no environment registered for {type(config).__name__}")


def reset(config: EnvConfig, seed: int, num_envs: int = 1) -> GridWorld:
    return make_env(config).reset(seed, num_envs)


__all__ = [
    "ENVIRONMENTS", "CleanupConfig", "CleanupEnv", "CoinsConfig", "CoinsEnv", "EnvConfig",
    "FloorConfig", "FloorEnv", "GridEnv", "GridWorld", "HarvestConfig", "HarvestEnv",
    "make_env", "observe", "render_ascii", "reset", "step",
]
