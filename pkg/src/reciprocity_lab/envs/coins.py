"""Two-player Coins dilemma on a fully observed grid.

Agent 0 owns colour A, agent 1 owns colour B.  Picking up any coin pays the
picker ``pickup_reward``; picking up the other player's colour also costs that
player ``penalty_to_owner``.  Coins spawn independently on every cell that holds
neither a coin nor an agent.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from ..errors import ConfigError
from .grid import EnvConfig, GridEnv, GridWorld

NO_COIN, COLOR_A, COLOR_B = 0, 1, 2
COINS_NOOP = 4  # absolute moves 0-3 are north, east, south, west
# observation plane order
SELF_PLANE, OTHER_PLANE, COIN_A_PLANE, COIN_B_PLANE = range(4)


@dataclasses.dataclass
class CoinsConfig(EnvConfig):
    num_agents: int = 2
    episode_length: int = 500
    height: int = 5
    width: int = 5
    spawn_prob: float = 0.005
    pickup_reward: float = 1.0
    penalty_to_owner: float = -2.0
    # swap colour planes in agent 0's observation so both agents see their own coins in plane B
    symmetrize: bool = True

    def validate(self) -> None:
        super().validate()
        if self.num_agents != 2:
            raise ConfigError(f"Coins is a 2-player game, got num_agents={self.num_agents}")
        if self.height <= 0 or self.width <= 0:
            raise ConfigError(f"grid dimensions must be positive, got {self.height}x{self.width}")
        if not 0.0 <= self.spawn_prob <= 1.0:
            raise ConfigError(f"spawn_prob must be in [0, 1], got {self.spawn_prob}")


def own_color(agent_id: int) -> int:
    return COLOR_A if agent_id == 0 else COLOR_B


def spawn_coins(coins: np.ndarray, occupancy: np.ndarray, spawn_prob: float,
                rng: np.random.Generator) -> np.ndarray:
    """Spawn on each empty, unoccupied cell with ``spawn_prob``; colour uniform over {A, B}.

    ``coins`` is the (B, H, W) colour grid and is updated in place.
    """
    draw = rng.random(coins.shape)
    colors = rng.integers(COLOR_A, COLOR_B + 1, size=coins.shape)
    new = (draw < spawn_prob) & (coins == NO_COIN) & (occupancy == 0)
    coins[new] = colors[new]
    return coins


def resolve_pickup(coins: np.ndarray, agent_id: int, positions: np.ndarray,
                   config: CoinsConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Remove any coin under ``agent_id`` (positions is (B, 2)) and score it.

    Returns ``(reward_deltas (B, 2), own_pickup (B,), wrong_pickup (B,))``.
    """
    envs = np.arange(coins.shape[0])
    r, c = positions[:, 0], positions[:, 1]
    color = coins[envs, r, c]
    picked = color != NO_COIN
    own = picked & (color == own_color(agent_id))
    wrong = picked & ~own
    coins[envs[picked], r[picked], c[picked]] = NO_COIN
    deltas = np.zeros((coins.shape[0], 2))
    deltas[:, agent_id] = np.where(picked, config.pickup_reward, 0.0)
    deltas[:, 1 - agent_id] = np.where(wrong, config.penalty_to_owner, 0.0)
    return deltas, own, wrong


def symmetrize_observation(obs: np.ndarray, agent_id: int, grid_cells: int = 25) -> np.ndarray:
    """Exchange the colour-A and colour-B planes of agent 0's observation.

    Works on flat observations of shape (..., 4 * grid_cells + 1); agent 1's
    observation is returned unchanged.
    """
    if agent_id != 0:
        return obs
    out = np.array(obs, copy=True)
    a = slice(COIN_A_PLANE * grid_cells, (COIN_A_PLANE + 1) * grid_cells)
    b = slice(COIN_B_PLANE * grid_cells, (COIN_B_PLANE + 1) * grid_cells)
    out[..., a], out[..., b] = obs[..., b], obs[..., a]
    return out


def coins_niceness_increment(wrong_pickup) -> np.ndarray:
    """-1 for a pickup that penalises the other player, else 0."""
    return -np.asarray(wrong_pickup, dtype=np.float64)


class CoinsEnv(GridEnv):
    name = "coins"
    action_names = ("north", "east", "south", "west", "noop")
    egocentric = False

    def __init__(self, config: CoinsConfig | None = None):
        config = config or CoinsConfig()
        config.validate()
        super().__init__(config, np.zeros((config.height, config.width), dtype=bool))

    @property
    def observation_planes(self) -> int:
        return 4

    def _init_layers(self, world: GridWorld) -> None:
        world.layers["coins"] = np.zeros((world.num_envs, self.height, self.width), dtype=np.int8)

    def _dynamics(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        coins = world.layers["coins"]
        B = world.num_envs
        own = np.zeros((B, 2), dtype=bool)
        wrong = np.zeros((B, 2), dtype=bool)
        # agents never share a cell, so the two pickups touch distinct coins
        for k in range(2):
            deltas, own[:, k], wrong[:, k] = resolve_pickup(coins, k, world.positions[:, k], self.config)
            rewards += deltas
        spawn_coins(coins, world.occupancy(), self.config.spawn_prob, world.rng)
        world.events["own_pickup"] = own
        world.events["wrong_pickup"] = wrong
        world.events["niceness"] = coins_niceness_increment(wrong)

    def observe_all(self, world: GridWorld) -> np.ndarray:
        B, n = world.num_envs, world.num_agents
        cells = self.height * self.width
        occ = world.occupancy().reshape(B, cells)
        coins = world.layers["coins"].reshape(B, cells)
        out = np.empty((B, n, self.observation_size))
        out[:, :, COIN_A_PLANE * cells:(COIN_A_PLANE + 1) * cells] = (coins == COLOR_A)[:, None]
        out[:, :, COIN_B_PLANE * cells:(COIN_B_PLANE + 1) * cells] = (coins == COLOR_B)[:, None]
        for k in range(n):
            out[:, k, :cells] = occ == k + 1
            out[:, k, cells:2 * cells] = (occ > 0) & (occ != k + 1)
        out[:, :, -1] = world.step_index / world.episode_length
        if self.config.symmetrize:
            out[:, 0] = symmetrize_observation(out[:, 0], 0, cells)
        return out

    def _cell_chars(self, world: GridWorld, env_index: int) -> np.ndarray:
        chars = super()._cell_chars(world, env_index)
        coins = world.layers["coins"][env_index]
        chars[coins == COLOR_A] = "a"
        chars[coins == COLOR_B] = "b"
        return chars


def own_coin_seeker_actions(world: GridWorld) -> np.ndarray:
    """Scripted policy: each agent steps toward its nearest own-colour coin, else stays.

    Returns (B, 2) Coins actions.  Ties between equally near coins go to the
    lowest flat cell index; vertical moves are preferred over horizontal ones.
    """
    coins = world.layers["coins"]
    B, H, W = coins.shape
    rows, cols = np.divmod(np.arange(H * W), W)
    actions = np.full((B, 2), COINS_NOOP, dtype=np.int64)
    for k in range(2):
        pos = world.positions[:, k]
        dist = np.abs(rows[None] - pos[:, :1]) + np.abs(cols[None] - pos[:, 1:])
        dist = np.where(coins.reshape(B, -1) == own_color(k), dist, H * W * 4)
        target = np.argmin(dist, axis=1)
        has = dist[np.arange(B), target] < H * W * 4
        dr = rows[target] - pos[:, 0]
        dc = cols[target] - pos[:, 1]
        step = np.where(dr < 0, 0, np.where(dr > 0, 2, np.where(dc > 0, 1, np.where(dc < 0, 3, COINS_NOOP))))
        actions[:, k] = np.where(has, step, COINS_NOOP)
    return actions
