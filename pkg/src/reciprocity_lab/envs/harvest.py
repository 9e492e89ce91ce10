"""Harvest: a common-pool resource dilemma.

Apples regrow only on their original sites, with a probability set by how many
apples remain within l1 distance 2.  A site with no remaining neighbours never
regrows, so a fully harvested cluster is gone for the rest of the episode.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import ConfigError
from .cleanup import MapEnvConfig
from .grid import GridEnv, GridWorld
from .maps import cells, resolve_map

NEIGHBOR_RADIUS = 2
# l1 ball of radius 2 minus the centre: 12 offsets
NEIGHBOR_OFFSETS = tuple(
    (dr, dc)
    for dr in range(-NEIGHBOR_RADIUS, NEIGHBOR_RADIUS + 1)
    for dc in range(-NEIGHBOR_RADIUS, NEIGHBOR_RADIUS + 1)
    if 0 < abs(dr) + abs(dc) <= NEIGHBOR_RADIUS
)


@dataclasses.dataclass
class HarvestConfig(MapEnvConfig):
    # (minimum neighbour count, probability), ascending
    regrowth_table: list = dataclasses.field(
        default_factory=lambda: [[0, 0.0], [1, 0.01], [3, 0.05], [5, 0.1]]
    )
    sus_cap: int = 3

    def validate(self) -> None:
        super().validate()
        table = [tuple(row) for row in self.regrowth_table]
        if not table or table[0][0] != 0:
            raise ConfigError("regrowth_table must start at 0 neighbours")
        if table[0][1] != 0.0:
            raise ConfigError("regrowth probability at 0 neighbours must be exactly 0")
        counts = [t[0] for t in table]
        if counts != sorted(counts) or len(set(counts)) != len(counts):
            raise ConfigError("regrowth_table neighbour counts must be strictly increasing")
        if any(not 0.0 <= p <= 1.0 for _, p in table):
            raise ConfigError("regrowth probabilities must lie in [0, 1]")
        if self.sus_cap < 0:
            raise ConfigError("sus_cap must be non-negative")

    def regrowth_lookup(self) -> np.ndarray:
        """Probability indexed by neighbour count 0..12."""
        out = np.zeros(len(NEIGHBOR_OFFSETS) + 1)
        for count, prob in self.regrowth_table:
            out[int(count):] = prob
        return out


def neighbor_counts(apples: np.ndarray) -> np.ndarray:
    """Apples within l1 distance 2 of every cell (excluding the cell itself).

    ``apples`` is (..., H, W) bool; the result has the same shape.
    """
    R = NEIGHBOR_RADIUS
    H, W = apples.shape[-2:]
    padded = np.zeros(apples.shape[:-2] + (H + 2 * R, W + 2 * R), dtype=np.int16)
    padded[..., R:R + H, R:R + W] = apples
    total = np.zeros(apples.shape, dtype=np.int16)
    for dr, dc in NEIGHBOR_OFFSETS:
        total += padded[..., R + dr:R + dr + H, R + dc:R + dc + W]
    return total


def neighbor_count(position, apples) -> int:
    """Apple-occupied cells other than ``position`` within l1 distance 2."""
    r, c = position
    apples = np.asarray(apples, dtype=bool)
    H, W = apples.shape
    total = 0
    for dr, dc in NEIGHBOR_OFFSETS:
        rr, cc = r + dr, c + dc
        if 0 <= rr < H and 0 <= cc < W and apples[rr, cc]:
            total += 1
    return total


def sus(position, apples_before_pickup, cap: int = 3) -> int:
    """Sustainability of eating the apple at ``position``: capped neighbour count."""
    return min(cap, neighbor_count(position, apples_before_pickup))


def harvest_niceness_increment(eaten_sus=None) -> float:
    """The sus value of the apple eaten this step, or 0 when nothing was eaten."""
    return 0.0 if eaten_sus is None else float(eaten_sus)


def regrow(apples: np.ndarray, sites: np.ndarray, occupancy: np.ndarray,
           rng: np.random.Generator, config: HarvestConfig) -> np.ndarray:
    """Regrow empty, unoccupied apple sites in place using the neighbour-count table."""
    prob = config.regrowth_lookup()[neighbor_counts(apples)]
    candidates = sites & ~apples & (occupancy == 0)
    apples |= candidates & (rng.random(apples.shape) < prob)
    return apples


class HarvestEnv(GridEnv):
    name = "harvest"
    egocentric = True

    def __init__(self, config: HarvestConfig | None = None):
        config = config or HarvestConfig()
        config.validate()
        rows = resolve_map("harvest", config.map)
        self.apple_sites = cells(rows, "A")
        if not self.apple_sites.any():
            raise ConfigError("a Harvest map needs at least one apple site (A)")
        super().__init__(config, cells(rows, "#"), np.argwhere(cells(rows, "P")))

    @property
    def observation_planes(self) -> int:
        return 3  # walls, apples, other agents

    def _init_layers(self, world: GridWorld) -> None:
        apples = np.broadcast_to(self.apple_sites, (world.num_envs, self.height, self.width)).copy()
        apples[np.arange(world.num_envs)[:, None], world.positions[..., 0], world.positions[..., 1]] = False
        world.layers["apples"] = apples

    def _dynamics(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        cfg = self.config
        apples = world.layers["apples"]
        envs = np.arange(world.num_envs)[:, None]
        r, c = world.positions[..., 0], world.positions[..., 1]
        eaten = apples[envs, r, c]
        sus_values = np.zeros(eaten.shape, dtype=np.int64)
        if eaten.any():
            # computed on the pre-pickup layout
            counts = neighbor_counts(apples)[envs, r, c]
            sus_values = np.where(eaten, np.minimum(counts, cfg.sus_cap), 0)
        apples[envs, r, c] = False
        rewards += eaten * cfg.apple_reward
        regrow(apples, self.apple_sites[None], world.occupancy(), world.rng, cfg)
        world.events["apples_eaten"] = eaten
        world.events["sus"] = sus_values
        world.events["niceness"] = sus_values.astype(np.float64)
        world.events["niceness_event"] = eaten

    def _feature_planes(self, world: GridWorld) -> np.ndarray:
        B = world.num_envs
        planes = np.zeros((B, 3, self.height, self.width))
        planes[:, 0] = self.walls
        planes[:, 1] = world.layers["apples"]
        planes[:, 2] = world.occupancy() > 0
        return planes

    def _cell_chars(self, world: GridWorld, env_index: int) -> np.ndarray:
        chars = super()._cell_chars(world, env_index)
        chars[world.layers["apples"][env_index]] = "@"
        return chars
