import numpy as np
import pytest

from reciprocity_lab.envs import CleanupConfig, make_env
from reciprocity_lab.envs.cleanup import apple_spawn_prob, cleanup_niceness_increment, initial_waste_count
from reciprocity_lab.envs.grid import EAST, FIRE_CLEAN, NOOP, WEST
from reciprocity_lab.errors import ConfigError
from reciprocity_lab.reciprocity import trajectory_niceness

CAP = 20


def test_apple_spawn_prob_is_linear_with_cutoff():
    cfg = CleanupConfig()
    crit = cfg.critical_waste_fraction * CAP
    assert apple_spawn_prob(0, cfg, CAP) == pytest.approx(cfg.apple_spawn_rate_max)
    assert apple_spawn_prob(crit, cfg, CAP) == 0.0
    assert apple_spawn_prob(crit / 2, cfg, CAP) == pytest.approx(cfg.apple_spawn_rate_max / 2)
    assert apple_spawn_prob(CAP, cfg, CAP) == 0.0
    probs = apple_spawn_prob(np.arange(CAP + 1), cfg, CAP)
    assert np.all(np.diff(probs) <= 0)


@pytest.mark.parametrize("seed", [3, 4])
def test_initial_waste_above_critical(seed):
    env = make_env(CleanupConfig(map="desk"))
    world = env.reset(seed, num_envs=2)
    waste = env.waste_count(world)
    assert np.all(waste > env.config.critical_waste_fraction * env.capacity)
    assert not (world.layers["waste"] & ~env.river).any()
    assert initial_waste_count(env.config, env.capacity) == waste[0]


def test_initial_waste_must_exceed_critical():
    with pytest.raises(ConfigError):
        CleanupConfig(initial_waste_fraction=0.3).validate()


def _facing_river(length=3):
    # desk map: river in columns 1-2; agent at column 3 facing west
    env = make_env(CleanupConfig(map="desk", num_agents=1, spawn_points=[[4, 3]], clean_beam_length=length))
    world = env.reset(0)
    world.orientations[0, 0] = WEST
    world.layers["waste"][:] = False
    return env, world


def test_clean_beam_hits_adjacent_waste():
    env, world = _facing_river()
    world.layers["waste"][0, 4, 2] = True
    cleaned = env.fire_clean_beam(world, 0)
    assert cleaned.tolist() == [1]
    assert not world.layers["waste"][0, 4, 2]


def test_clean_beam_first_cell_only():
    env, world = _facing_river()
    world.layers["waste"][0, 4, 1] = True
    world.layers["waste"][0, 4, 2] = True
    assert env.fire_clean_beam(world, 0).tolist() == [1]
    assert world.layers["waste"][0, 4, 1] and not world.layers["waste"][0, 4, 2]


def test_clean_beam_facing_away():
    env, world = _facing_river()
    world.layers["waste"][0, 4, 2] = True
    world.orientations[0, 0] = EAST
    assert env.fire_clean_beam(world, 0).tolist() == [0]


def test_clean_beam_range_limit():
    env = make_env(CleanupConfig(map="desk", num_agents=1, spawn_points=[[4, 6]]))
    world = env.reset(0)
    world.orientations[0, 0] = WEST
    world.layers["waste"][:] = False
    world.layers["waste"][0, 4, 2] = True  # distance 4
    assert env.fire_clean_beam(world, 0).tolist() == [0]


def test_cleaning_gives_no_reward_and_counts_as_niceness():
    env, world = _facing_river()
    world.layers["waste"][0, 4, 2] = True
    _, rewards, _ = env.step(world, [FIRE_CLEAN])
    assert rewards[0, 0] == 0.0
    assert world.events["cleaned"][0, 0] == 1
    assert world.events["niceness"][0, 0] == 1.0


def test_niceness_increment_and_trajectory():
    assert cleanup_niceness_increment(1) == 1 and cleanup_niceness_increment(0) == 0
    n = trajectory_niceness([1.0, 1.0], 0.95)
    assert n[-1] == pytest.approx(1 + 0.95)
    closed = trajectory_niceness([1.0] + [0.0] * 9, 0.95)
    assert np.allclose(closed, 0.95 ** np.arange(10))


def test_river_capacity_respected():
    env = make_env(CleanupConfig(map="desk", waste_spawn_prob=1.0, num_agents=1))
    world = env.reset(0)
    for _ in range(env.capacity + 10):
        env.tick_dynamics(world)
    assert env.waste_count(world)[0] == env.capacity


def test_apple_spawn_rate_matches_linear_law():
    cfg = CleanupConfig(map="desk", waste_spawn_prob=0.0, num_agents=1, initial_waste_fraction=None)
    env = make_env(cfg)
    world = env.reset(0, num_envs=1000)
    world.layers["waste"][:] = False
    river = np.argwhere(env.river)
    crit = cfg.critical_waste_fraction * env.capacity
    k = int(crit // 2)
    world.layers["waste"][:, river[:k, 0], river[:k, 1]] = True
    world.layers["apples"][:] = False
    env.tick_dynamics(world)
    free = env.orchard & (world.occupancy() == 0)
    per_cell = world.layers["apples"][:, env.orchard].mean(axis=0)
    p = float(apple_spawn_prob(k, cfg, env.capacity))
    grown = world.layers["apples"][free].mean()
    se = np.sqrt(p * (1 - p) / free.sum())
    assert abs(grown - p) < 3 * se
    assert per_cell.shape == (env.orchard.sum(),)


def test_all_idle_gives_zero_collective_return():
    env = make_env(CleanupConfig(map="default"))
    world = env.reset(0, num_envs=4)
    total = np.zeros(4)
    while not world.done:
        _, rewards, _ = env.step(world, np.full((4, 5), NOOP))
        total += rewards.sum(axis=1)
    assert total.tolist() == [0.0] * 4
    assert world.layers["apples"].sum() == 0


def test_contributions_equal_summed_niceness():
    env = make_env(CleanupConfig(map="desk", episode_length=200))
    world = env.reset(1, num_envs=3)
    rng = np.random.default_rng(0)
    cleaned = np.zeros((3, 5))
    nice = np.zeros((3, 5))
    while not world.done:
        env.step(world, rng.integers(0, 9, size=(3, 5)))
        cleaned += world.events["cleaned"]
        nice += world.events["niceness"]
    assert np.array_equal(cleaned, nice)
    assert cleaned.sum() > 0
