"""Batched, seedable multi-agent gridworld substrate.

A :class:`GridWorld` holds ``num_envs`` independent copies of the same map that
advance in lock-step.  All copies share one random generator, so a world is
fully determined by ``(config, seed, num_envs)`` and the joint action sequence.

Step order inside :meth:`GridEnv.step`:

1. rotations,
2. movement with conflict resolution (uniformly random agent priority per step),
3. beams (fining, plus any environment-specific beam),
4. environment dynamics (pickups, spawning, regrowth) via :meth:`GridEnv._dynamics`.
"""
from __future__ import annotations

import dataclasses
from typing import Any

import numpy as np

from ..errors import ArityError, ConfigError, LifecycleError

NORTH, EAST, SOUTH, WEST = range(4)
HEADINGS = np.array([[-1, 0], [0, 1], [1, 0], [0, -1]], dtype=np.int64)

# Egocentric action set shared by Cleanup and Harvest. Moves are relative to the
# agent's heading; facing north they coincide with N/E/S/W.
MOVE_FORWARD, MOVE_RIGHT, MOVE_BACK, MOVE_LEFT = range(4)
TURN_LEFT, TURN_RIGHT, FIRE_CLEAN, FIRE_FINE, NOOP = range(4, 9)
EGOCENTRIC_ACTIONS = (
    "forward", "right", "backward", "left",
    "turn_left", "turn_right", "clean", "fine", "noop",
)


@dataclasses.dataclass
class Position:
    row: int
    col: int


@dataclasses.dataclass
class AgentPose:
    position: Position
    orientation: int


@dataclasses.dataclass
class EnvConfig:
    """Fields common to every environment."""

    num_agents: int = 2
    episode_length: int = 500
    # None -> uniform over the map's spawn cells (or all floor cells)
    spawn_points: list | None = None

    def validate(self) -> None:
        if self.num_agents < 0:
            raise ConfigError(f"num_agents must be non-negative, got {self.num_agents}")
        if self.episode_length <= 0:
            raise ConfigError(f"episode_length must be positive, got {self.episode_length}")


@dataclasses.dataclass(eq=False)
class GridWorld:
    """State of ``num_envs`` synchronised copies of one environment."""

    height: int
    width: int
    walls: np.ndarray  # (H, W) bool, shared by all copies
    layers: dict[str, np.ndarray]  # name -> (B, H, W) per-copy entity layers
    positions: np.ndarray  # (B, n, 2) int64 row/col
    orientations: np.ndarray  # (B, n) int64 heading
    step_index: int
    episode_length: int
    rng: np.random.Generator
    env: Any = dataclasses.field(default=None, repr=False)
    events: dict[str, np.ndarray] = dataclasses.field(default_factory=dict)

    @property
    def num_envs(self) -> int:
        return self.positions.shape[0]

    @property
    def num_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def done(self) -> bool:
        return self.step_index >= self.episode_length

    def occupancy(self) -> np.ndarray:
        """(B, H, W) int8 grid holding ``agent_id + 1`` where an agent stands, else 0."""
        B, n = self.positions.shape[:2]
        occ = np.zeros((B, self.height, self.width), dtype=np.int8)
        occ[np.arange(B)[:, None], self.positions[..., 0], self.positions[..., 1]] = (
            np.arange(1, n + 1, dtype=np.int8)
        )
        return occ

    def poses(self, env_index: int = 0) -> list[AgentPose]:
        return [
            AgentPose(Position(int(r), int(c)), int(o))
            for (r, c), o in zip(self.positions[env_index], self.orientations[env_index])
        ]

    def copy(self) -> "GridWorld":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return dataclasses.replace(
            self,
            layers={k: v.copy() for k, v in self.layers.items()},
            positions=self.positions.copy(),
            orientations=self.orientations.copy(),
            rng=rng,
            events={k: v.copy() for k, v in self.events.items()},
        )

    def state_equal(self, other: "GridWorld") -> bool:
        """Bitwise comparison of every state field, including the generator state."""
        return (
            self.step_index == other.step_index
            and np.array_equal(self.walls, other.walls)
            and self.layers.keys() == other.layers.keys()
            and all(np.array_equal(v, other.layers[k]) for k, v in self.layers.items())
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.orientations, other.orientations)
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


def parse_map(text: str) -> list[str]:
    rows = [line.strip() for line in text.strip("\n").splitlines() if line.strip()]
    if not rows:
        raise ConfigError("map text is empty")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError("map rows must all have the same width")
    return rows


def _view_offsets(view_size: int, view_back: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-heading (4, V, V) row/col offsets of each window cell from the agent.

    Window row 0 is farthest ahead; the agent sits on row ``V - 1 - view_back``,
    middle column.
    """
    i, j = np.mgrid[0:view_size, 0:view_size]
    fwd = (view_size - 1 - view_back) - i
    right = j - view_size // 2
    drow = np.stack([-fwd, right, fwd, -right])
    dcol = np.stack([right, fwd, -right, -fwd])
    return drow, dcol


class GridEnv:
    """Base class: movement, beams, observation windows and ASCII rendering.

    Subclasses set ``walls``, ``spawn_cells``, the observation mode and implement
    the ``_init_layers`` / ``_dynamics`` hooks.
    """

    name = "grid"
    action_names: tuple[str, ...] = EGOCENTRIC_ACTIONS
    egocentric = True
    dynamic_layer_names: tuple[str, ...] = ()

    def __init__(self, config: EnvConfig, walls: np.ndarray, spawn_cells: np.ndarray | None = None):
        config.validate()
        self.config = config
        self.walls = np.asarray(walls, dtype=bool)
        self.height, self.width = self.walls.shape
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("grid dimensions must be positive")
        if config.spawn_points is not None:
            cells = np.asarray(config.spawn_points, dtype=np.int64).reshape(-1, 2)
        elif spawn_cells is not None and len(spawn_cells):
            cells = np.asarray(spawn_cells, dtype=np.int64).reshape(-1, 2)
        else:
            cells = np.argwhere(~self.walls)
        if len(cells) < config.num_agents:
            raise ConfigError(
                f"{config.num_agents} agents need at least as many spawn cells, found {len(cells)}"
            )
        if np.any(self.walls[cells[:, 0], cells[:, 1]]):
            raise ConfigError("spawn cell placed on a wall")
        self.spawn_cells = cells
        self.fixed_spawns = config.spawn_points is not None and len(cells) == config.num_agents
        if self.egocentric:
            self.view_size = int(getattr(config, "view_size", 15))
            self.view_back = int(getattr(config, "view_back", 2))
            if not 0 <= self.view_back < self.view_size:
                raise ConfigError("view_back must lie inside the observation window")
            self._drow, self._dcol = _view_offsets(self.view_size, self.view_back)

    # ------------------------------------------------------------------ sizes
    @property
    def num_agents(self) -> int:
        return self.config.num_agents

    @property
    def num_actions(self) -> int:
        return len(self.action_names)

    @property
    def observation_planes(self) -> int:
        raise NotImplementedError

    @property
    def observation_grid(self) -> tuple[int, int]:
        if self.egocentric:
            return self.view_size, self.view_size
        return self.height, self.width

    @property
    def observation_size(self) -> int:
        h, w = self.observation_grid
        return self.observation_planes * h * w + 1

    # ------------------------------------------------------------- lifecycle
    def reset(self, seed: int, num_envs: int = 1) -> GridWorld:
        if num_envs < 1:
            raise ConfigError("num_envs must be positive")
        rng = np.random.default_rng(seed)
        n = self.num_agents
        if self.fixed_spawns:
            positions = np.broadcast_to(self.spawn_cells, (num_envs, n, 2)).copy()
        else:
            pick = np.argsort(rng.random((num_envs, len(self.spawn_cells))), axis=1)[:, :n]
            positions = self.spawn_cells[pick]
        if self.egocentric:
            orientations = rng.integers(0, 4, size=(num_envs, n))
        else:
            orientations = np.zeros((num_envs, n), dtype=np.int64)
        world = GridWorld(
            height=self.height,
            width=self.width,
            walls=self.walls,
            layers={},
            positions=positions.astype(np.int64),
            orientations=orientations.astype(np.int64),
            step_index=0,
            episode_length=self.config.episode_length,
            rng=rng,
            env=self,
        )
        self._init_layers(world)
        return world

    def step(self, world: GridWorld, joint_actions) -> tuple[GridWorld, np.ndarray, bool]:
        """Advance every copy by one step, in place.

        ``joint_actions`` has shape ``(num_envs, num_agents)``; a flat sequence of
        ``num_agents`` actions is accepted for single-copy worlds.  Returns the
        (mutated) world, ``(num_envs, num_agents)`` rewards and the done flag.
        Per-step bookkeeping (pickups, niceness increments, ...) is left in
        ``world.events``.
        """
        if world.done:
            raise LifecycleError("episode is finished; call reset() first")
        actions = np.asarray(joint_actions, dtype=np.int64)
        if actions.ndim == 1:
            actions = actions[None, :]
        if actions.shape != (world.num_envs, world.num_agents):
            raise ArityError(
                f"expected actions of shape {(world.num_envs, world.num_agents)}, got {actions.shape}"
            )
        if actions.size and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise ValueError(f"actions must lie in [0, {self.num_actions})")
        world.events = {}
        rewards = np.zeros((world.num_envs, world.num_agents))
        self._rotate(world, actions)
        self._move(world, actions)
        self._beams(world, actions, rewards)
        self._dynamics(world, actions, rewards)
        world.step_index += 1
        return world, rewards, world.done

    # -------------------------------------------------------------- movement
    def _move_headings(self, world: GridWorld, actions: np.ndarray) -> np.ndarray:
        """Heading of each requested move, or -1 for actions that do not move."""
        is_move = actions < 4
        if self.egocentric:
            heading = (world.orientations + actions) % 4
        else:
            heading = actions
        return np.where(is_move, heading, -1)

    def _rotate(self, world: GridWorld, actions: np.ndarray) -> None:
        if not self.egocentric:
            return
        turn = (actions == TURN_RIGHT).astype(np.int64) - (actions == TURN_LEFT)
        world.orientations = (world.orientations + turn) % 4

    def _move(self, world: GridWorld, actions: np.ndarray) -> None:
        pos = world.positions
        B, n = actions.shape
        heading = self._move_headings(world, actions)
        moving = heading >= 0
        target = pos + HEADINGS[np.maximum(heading, 0)] * moving[..., None]
        inside = (
            (target[..., 0] >= 0) & (target[..., 0] < self.height)
            & (target[..., 1] >= 0) & (target[..., 1] < self.width)
        )
        target = np.where(inside[..., None], target, pos)
        target = np.where(self.walls[target[..., 0], target[..., 1]][..., None], pos, target)
        moving &= np.any(target != pos, axis=-1)
        # priority drawn every step, moving or not, so the stream does not depend on actions
        priority = np.argsort(world.rng.random((B, n)), axis=1)
        if not moving.any():
            return
        occ = world.occupancy()
        envs = np.arange(B)
        for rank in range(n):
            k = priority[:, rank]
            tr, tc = target[envs, k, 0], target[envs, k, 1]
            go = moving[envs, k] & (occ[envs, tr, tc] == 0)
            if not go.any():
                continue
            b, kk = envs[go], k[go]
            occ[b, pos[b, kk, 0], pos[b, kk, 1]] = 0
            occ[b, tr[go], tc[go]] = (kk + 1).astype(np.int8)
            pos[b, kk, 0] = tr[go]
            pos[b, kk, 1] = tc[go]

    # ----------------------------------------------------------------- beams
    def trace_beam(self, world: GridWorld, agent_id: int, length: int, hit_mask: np.ndarray):
        """First cell along ``agent_id``'s heading (distance 1..length) where ``hit_mask`` is set.

        ``hit_mask`` is (B, H, W) bool.  Beams stop at walls and the map edge.
        Returns ``(hit, rows, cols)`` with ``hit`` (B,) bool.
        """
        B = world.num_envs
        envs = np.arange(B)
        step = HEADINGS[world.orientations[:, agent_id]]
        cur = world.positions[:, agent_id].copy()
        alive = np.ones(B, dtype=bool)
        hit = np.zeros(B, dtype=bool)
        rows = np.zeros(B, dtype=np.int64)
        cols = np.zeros(B, dtype=np.int64)
        for _ in range(length):
            cur = cur + step
            r, c = cur[:, 0], cur[:, 1]
            inside = (r >= 0) & (r < self.height) & (c >= 0) & (c < self.width)
            alive &= inside
            rc, cc = np.where(alive, r, 0), np.where(alive, c, 0)
            alive &= ~self.walls[rc, cc]
            found = alive & ~hit & hit_mask[envs, rc, cc]
            rows = np.where(found, rc, rows)
            cols = np.where(found, cc, cols)
            hit |= found
            alive &= ~found
            if not alive.any():
                break
        return hit, rows, cols

    def _beams(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        cfg = self.config
        if not getattr(cfg, "fine_enabled", False):
            return
        firing = actions == FIRE_FINE
        world.events["fired_fine"] = firing
        if not firing.any():
            return
        occ = world.occupancy()
        envs = np.arange(world.num_envs)
        for k in range(world.num_agents):
            if not firing[:, k].any():
                continue
            hit, r, c = self.trace_beam(world, k, cfg.fine_beam_length, occ > 0)
            hit &= firing[:, k]
            rewards[:, k] += np.where(firing[:, k], cfg.fine_cost, 0.0)
            victim = occ[envs, r, c].astype(np.int64) - 1
            rewards[envs[hit], victim[hit]] += cfg.fine_penalty

    # ----------------------------------------------------------------- hooks
    def _init_layers(self, world: GridWorld) -> None:
        pass

    def _dynamics(self, world: GridWorld, actions: np.ndarray, rewards: np.ndarray) -> None:
        pass

    def _feature_planes(self, world: GridWorld) -> np.ndarray:
        """(B, P, H, W) float planes for egocentric observation (the other-agents plane last)."""
        raise NotImplementedError

    def _cell_chars(self, world: GridWorld, env_index: int) -> np.ndarray:
        chars = np.full((self.height, self.width), ".", dtype="<U1")
        chars[self.walls] = "#"
        return chars

    # ----------------------------------------------------------- observation
    def observe(self, world: GridWorld, agent_id: int) -> np.ndarray:
        """(num_envs, observation_size) features for one agent."""
        if not 0 <= agent_id < world.num_agents:
            raise IndexError(f"agent_id {agent_id} out of range for {world.num_agents} agents")
        return self.observe_all(world)[:, agent_id]

    def observe_all(self, world: GridWorld) -> np.ndarray:
        """(num_envs, num_agents, observation_size) features for every agent."""
        planes = self._feature_planes(world)
        frac = world.step_index / world.episode_length
        return self._egocentric_windows(world, planes, frac)

    def _egocentric_windows(self, world: GridWorld, planes: np.ndarray, frac: float) -> np.ndarray:
        B, P = planes.shape[:2]
        V = self.view_size
        padded = np.zeros((B, P, self.height + 2 * V, self.width + 2 * V))
        padded[:, :, V:V + self.height, V:V + self.width] = planes
        envs = np.arange(B)[:, None, None]
        n = world.num_agents
        out = np.empty((B, n, P * V * V + 1))
        self_row, self_col = V - 1 - self.view_back, V // 2
        for k in range(n):
            o = world.orientations[:, k]
            rows = world.positions[:, k, 0][:, None, None] + self._drow[o] + V
            cols = world.positions[:, k, 1][:, None, None] + self._dcol[o] + V
            window = padded[envs, :, rows, cols]  # (B, V, V, P)
            window[:, self_row, self_col, -1] = 0.0  # the agents plane excludes the viewer
            out[:, k, :-1] = window.transpose(0, 3, 1, 2).reshape(B, -1)
        out[:, :, -1] = frac
        return out

    # -------------------------------------------------------------- display
    def render_ascii(self, world: GridWorld, env_index: int = 0) -> str:
        chars = self._cell_chars(world, env_index)
        for k, (r, c) in enumerate(world.positions[env_index]):
            chars[r, c] = str(k % 10)
        return "\n".join("".join(row) for row in chars)


@dataclasses.dataclass
class FloorConfig(EnvConfig):
    height: int = 5
    width: int = 5

    def validate(self) -> None:
        super().validate()
        if self.height <= 0 or self.width <= 0:
            raise ConfigError(f"grid dimensions must be positive, got {self.height}x{self.width}")


class FloorEnv(GridEnv):
    """Open, fully observed floor with no entities: the bare movement engine."""

    name = "floor"
    action_names = ("north", "east", "south", "west", "noop")
    egocentric = False

    def __init__(self, config: FloorConfig):
        config.validate()
        super().__init__(config, np.zeros((config.height, config.width), dtype=bool))

    @property
    def observation_planes(self) -> int:
        return 2

    def observe_all(self, world: GridWorld) -> np.ndarray:
        B, n = world.num_envs, world.num_agents
        occ = world.occupancy()
        out = np.empty((B, n, self.observation_size))
        for k in range(n):
            own = occ == k + 1
            planes = np.stack([own, (occ > 0) & ~own], axis=1)
            out[:, k, :-1] = planes.reshape(B, -1)
        out[:, :, -1] = world.step_index / world.episode_length
        return out


def render_ascii(world: GridWorld, env_index: int = 0) -> str:
    """One character per cell; agents drawn as their index."""
    return world.env.render_ascii(world, env_index)


def step(world: GridWorld, joint_actions) -> tuple[GridWorld, np.ndarray, bool]:
    return world.env.step(world, joint_actions)


def observe(world: GridWorld, agent_id: int) -> np.ndarray:
    return world.env.observe(world, agent_id)
