"""Cleanup: a public-goods dilemma.

Waste accumulates in a river; apple spawning in a separate orchard falls
linearly with the amount of waste and stops entirely once waste reaches the
critical fraction of river capacity.  Episodes begin just above that point, so
nothing grows until someone cleans.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..errors import ConfigError
from .grid import FIRE_CLEAN, EnvConfig, GridEnv, GridWorld
from .maps import cells, resolve_map


@dataclasses.dataclass
class MapEnvConfig(EnvConfig):
    """Fields shared by the partially observed, map-based environments."""

    num_agents: int = 5
    episode_length: int = 1000
    map: str = "default"
    view_size: int = 15
    view_back: int = 2
    fine_enabled: bool = True
    fine_beam_length: int = 5
    fine_penalty: float = -50.0
    fine_cost: float = -1.0
    apple_reward: float = 1.0

    def validate(self) -> None:
        super().validate()
        if self.view_size < 1:
            raise ConfigError("view_size must be positive")
        if self.fine_beam_length < 0:
            raise ConfigError("fine_beam_length must be non-negative")


@dataclasses.dataclass
class CleanupConfig(MapEnvConfig):
    waste_spawn_prob: float = 0.5
    apple_spawn_rate_max: float = 0.05
    critical_waste_fraction: float = 0.4
    # None -> 1.05 x critical_waste_fraction, clamped to a full river
    initial_waste_fraction: float | None = None
    clean_beam_length: int = 3

    def validate(self) -> None:
        super().validate()
        if not 0.0 < self.critical_waste_fraction <= 1.0:
            raise ConfigError("critical_waste_fraction must be in (0, 1]")
        for name in ("waste_spawn_prob", "apple_spawn_rate_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        if self.initial_fraction <= self.critical_waste_fraction and self.critical_waste_fraction < 1.0:
            raise ConfigError("initial waste must start above the critical level")
        if self.clean_beam_length < 0:
            raise ConfigError("clean_beam_length must be non-negative")

    @property
    def initial_fraction(self) -> float:
        if self.initial_waste_fraction is None:
            return min(1.0, 1.05 * self.critical_waste_fraction)
        return min(1.0, self.initial_waste_fraction)


def apple_spawn_prob(waste_count, config: CleanupConfig, capacity: int):
    """Per-cell apple spawn probability: linear in waste, zero at the critical level."""
    critical = config.critical_waste_fraction * capacity
    return config.apple_spawn_rate_max * np.maximum(0.0, 1.0 - np.asarray(waste_count) / critical)


def initial_waste_count(config: CleanupConfig, capacity: int) -> int:
    count = math.ceil(config.initial_fraction * capacity)
    critical = config.critical_waste_fraction * capacity
    if count <= critical and count < capacity:
        count = math.floor(critical) + 1
    return min(count, capacity)


def cleanup_niceness_increment(cleaned_count):
    """One unit of niceness per unit of waste removed."""
    return np.asarray(cleaned_count, dtype=np.float64)


class CleanupEnv(GridEnv):
    name = "cleanup"
    egocentric = True

    def __init__(self, config: CleanupConfig | None = None):
        config = config or CleanupConfig()
        config.validate()
        rows = resolve_map("cleanup", config.map)
        self.river = cells(rows, "R")
        self.orchard = cells(rows, "O")
        if not self.river.any() or not self.orchard.any():
            raise ConfigError("a Cleanup map needs at least one river (R) and one orchard (O) cell")
        self.capacity = int(self.river.sum())
        self._river_cells = np.argwhere(self.river)
        super().__init__(config, cells(rows, "#"), np.argwhere(cells(rows, "P")))

    @property
    def observation_planes(self) -> int:
        return 5  # walls, river, waste, apples, other agents

    def waste_count(self, world: GridWorld) -> np.ndarray:
        return world.layers["waste"].sum(axis=(1, 2))

    def _init_layers(self, world: GridWorld) -> None:
        B = world.num_envs
        waste = np.zeros((B, self.height, self.width), dtype=bool)
        k = initial_waste_count(self.config, self.capacity)
        pick = np.argsort(world.rng.random((B, self.capacity)), axis=1)[:, :k]
        chosen = self._river_cells[pick]  # (B, k, 2)
        waste[np.arange(B)[:, None], chosen[..., 0], chosen[..., 1]] = True
        world.layers["waste"] = waste
        world.layers["apples"] = np.zeros((B, self.height, self.width), dtype=bool)

    def fire_clean_beam(self, world: GridWorld, agent_id: int, firing: np.ndarray | None = None) -> np.ndarray:
        """Empty the first waste cell within beam range; returns cleaned counts (B,) in {0, 1}."""
        waste = world.layers["waste"]
        hit, r, c = self.trace_beam(world, agent_id, self.config.clean_beam_length, waste)
        if firing is not None:
            hit &= firing
        envs = np.arange(world.num_envs)
        waste[envs[hit], r[hit], c[hit]] = False
        return hit.astype(np.int64)

    def tick_dynamics(self, world: GridWorld) -> None:
        """Waste spawn (one unit at most), then apple spawn on empty orchard cells."""
        cfg = self.config
        rng = world.rng
        B = world.num_envs
        waste, apples = world.layers["waste"], world.layers["apples"]
        envs = np.arange(B)

        spawn = rng.random(B) < cfg.waste_spawn_prob
        empty_river = ~waste[:, self._river_cells[:, 0], self._river_cells[:, 1]]  # (B, capacity)
        scores = np.where(empty_river, rng.random((B, self.capacity)), -1.0)
        slot = np.argmax(scores, axis=1)
        spawn &= empty_river.any(axis=1)
        where = self._river_cells[slot]
        waste[envs[spawn], where[spawn, 0], where[spawn, 1]] = True

        p = apple_spawn_prob(self.waste_count(world), cfg, self.capacity)  # (B,)
        free = self.orchard[None] & ~apples & (world.occupancy() == 0)
        grow = free & (rng.random(apples.shape) < p[:, None, None])
        apples |= grow

    def _beams(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        super()._beams(world, actions, rewards)
        cleaned = np.zeros(actions.shape, dtype=np.int64)
        for k in range(world.num_agents):
            firing = actions[:, k] == FIRE_CLEAN
            if firing.any():
                cleaned[:, k] = self.fire_clean_beam(world, k, firing)
        world.events["cleaned"] = cleaned
        world.events["niceness"] = cleanup_niceness_increment(cleaned)

    def _dynamics(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        apples = world.layers["apples"]
        envs = np.arange(world.num_envs)[:, None]
        r, c = world.positions[..., 0], world.positions[..., 1]
        eaten = apples[envs, r, c]
        apples[envs, r, c] = False
        rewards += eaten * self.config.apple_reward
        world.events["apples_eaten"] = eaten
        self.tick_dynamics(world)

    def _feature_planes(self, world: GridWorld) -> np.ndarray:
        B = world.num_envs
        planes = np.zeros((B, 5, self.height, self.width))
        planes[:, 0] = self.walls
        planes[:, 1] = self.river
        planes[:, 2] = world.layers["waste"]
        planes[:, 3] = world.layers["apples"]
        planes[:, 4] = world.occupancy() > 0
        return planes

    def _cell_chars(self, world: GridWorld, env_index: int) -> np.ndarray:
        chars = super()._cell_chars(world, env_index)
        chars[self.river] = "="
        chars[world.layers["waste"][env_index]] = "~"
        chars[world.layers["apples"][env_index]] = "@"
        return chars
