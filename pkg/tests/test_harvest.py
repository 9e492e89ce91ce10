import numpy as np
import pytest
from scipy import stats

from reciprocity_lab.envs import HarvestConfig, make_env
from reciprocity_lab.envs.grid import NOOP
from reciprocity_lab.envs.harvest import (
    NEIGHBOR_OFFSETS, harvest_niceness_increment, neighbor_count, neighbor_counts, regrow, sus,
)
from reciprocity_lab.errors import ConfigError
from reciprocity_lab.reciprocity import trajectory_niceness


def grid(points, shape=(9, 9)):
    g = np.zeros(shape, dtype=bool)
    for p in points:
        g[p] = True
    return g


def test_neighbor_offsets_are_the_l1_ball():
    ball = {(dr, dc) for dr in range(-2, 3) for dc in range(-2, 3) if abs(dr) + abs(dc) <= 2}
    assert len(ball) == 13
    assert set(NEIGHBOR_OFFSETS) == ball - {(0, 0)}


def test_neighbor_count_examples():
    c = (4, 4)
    assert neighbor_count(c, grid([c])) == 0
    assert neighbor_count(c, grid([c, (4, 5), (4, 6), (4, 7)])) == 2
    full = grid([(4 + dr, 4 + dc) for dr, dc in NEIGHBOR_OFFSETS] + [c])
    assert neighbor_count(c, full) == 12


def test_vectorised_counts_match_scalar(rng):
    apples = rng.random((7, 11)) < 0.4
    counts = neighbor_counts(apples)
    for r in range(7):
        for c in range(11):
            assert counts[r, c] == neighbor_count((r, c), apples)


def test_sus_examples():
    c = (4, 4)
    assert sus(c, grid([c])) == 0
    assert sus(c, grid([c, (4, 5), (3, 4)])) == 2
    seven = grid([c] + [(4 + dr, 4 + dc) for dr, dc in NEIGHBOR_OFFSETS[:7]])
    assert sus(c, seven) == 3


def test_niceness_increment_and_trajectory():
    assert harvest_niceness_increment(3) == 3
    assert harvest_niceness_increment() == 0
    assert trajectory_niceness([3.0, 0.0], 0.95)[-1] == pytest.approx(3 * 0.95)


def test_zero_neighbour_probability_must_be_zero():
    with pytest.raises(ConfigError):
        HarvestConfig(regrowth_table=[[0, 0.1], [1, 0.2]]).validate()
    table = HarvestConfig().regrowth_lookup()
    assert table[0] == 0 and np.all(np.diff(table) >= 0)


def test_isolated_cluster_never_regrows(rng):
    sites = grid([(1, 1), (1, 2), (2, 1), (7, 7)])
    apples = np.zeros_like(sites)[None]
    for _ in range(2000):
        regrow(apples, sites[None], np.zeros_like(apples, dtype=np.int8), rng, HarvestConfig())
    assert not apples.any()


def test_extinction_is_absorbing():
    env = make_env(HarvestConfig(map="desk", num_agents=1))
    world = env.reset(0)
    world.layers["apples"][:] = False
    for _ in range(300):
        env.step(world, [NOOP])
    assert not world.layers["apples"].any()


def test_sus_uses_pre_pickup_layout():
    env = make_env(HarvestConfig(map="desk", num_agents=1, spawn_points=[[3, 2]]))
    world = env.reset(0)
    world.layers["apples"][:] = False
    world.layers["apples"][0, 3, 3] = True  # the apple to be eaten, east of the agent
    for p in [(2, 3), (4, 3), (3, 4), (2, 4)]:
        world.layers["apples"][0, p[0], p[1]] = True
    world.orientations[0, 0] = 1
    _, rewards, _ = env.step(world, [0])  # forward, facing east
    assert rewards[0, 0] == 1.0
    assert world.events["sus"][0, 0] == 3
    assert world.events["niceness"][0, 0] == 3.0


def test_regrowth_frequencies_chi_square():
    """Each neighbour class regrows at its table probability (10,000 trials per class)."""
    cfg = HarvestConfig()
    trials = 10_000
    for k, p in [(1, 0.01), (2, 0.01), (3, 0.05), (4, 0.05), (5, 0.1), (8, 0.1)]:
        c = (4, 4)
        sites = grid([c] + [(4 + dr, 4 + dc) for dr, dc in NEIGHBOR_OFFSETS[:k]])
        apples = np.broadcast_to(sites, (trials, 9, 9)).copy()
        apples[:, 4, 4] = False
        regrow(apples, sites[None], np.zeros(apples.shape, dtype=np.int8),
               np.random.default_rng(k), cfg)
        grown = int(apples[:, 4, 4].sum())
        _, pvalue = stats.chisquare([grown, trials - grown], [p * trials, (1 - p) * trials])
        assert pvalue > 0.01, (k, grown)


def test_apples_only_on_sites():
    env = make_env(HarvestConfig(map="desk", episode_length=200))
    world = env.reset(0, num_envs=2)
    rng = np.random.default_rng(1)
    while not world.done:
        env.step(world, rng.integers(0, 9, size=(2, 5)))
        assert not (world.layers["apples"] & ~env.apple_sites).any()
