import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from reciprocity_lab.errors import CheckpointError, ConfigError, DataError, NumericalFault
from reciprocity_lab.harness import (
    Trainer,
    ablation_run,
    config_from_dict,
    dump_config,
    equality,
    influence_probe,
    instability_config,
    instability_study,
    lagged_correlation,
    load_config,
    niceness_probe,
    read_manifest,
    read_metrics,
    run_experiment,
    summarize,
    sustainability,
    with_ablation,
)
from reciprocity_lab.harness.metrics import MetricsWriter
from reciprocity_lab.learner import Learner

from conftest import small_config

NETWORK_ROSTER = [{"kind": "innovator"}, {"kind": "imitator", "niceness_source": "niceness_network"}]


# ---------------------------------------------------------------- config

def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        small_config(learner={"learning_rat": 1e-3})
    with pytest.raises(ConfigError, match="unknown keys"):
        small_config(colour="blue")
    with pytest.raises(ConfigError, match="unknown"):
        small_config(environment={"name": "coins", "grid": 5})


def test_roster_must_match_the_environment():
    with pytest.raises(ConfigError, match="2-player"):
        small_config(roster=[{"kind": "innovator"}] * 3)
    with pytest.raises(ConfigError, match="need an innovator"):
        small_config(roster=[{"kind": "imitator"}, {"kind": "imitator"}])
    with pytest.raises(ConfigError, match="not an innovator"):
        small_config(roster=[{"kind": "innovator"}, {"kind": "imitator", "imitates": 1}])
    with pytest.raises(ConfigError, match="kind"):
        small_config(roster=[{"kind": "innovator"}, {"kind": "trickster"}])


def test_episode_counts_must_fill_whole_batches():
    with pytest.raises(ConfigError, match="multiple of num_envs"):
        small_config(episodes=6)
    with pytest.raises(ConfigError, match="eval_every"):
        small_config(eval_every=0)


def test_yaml_round_trip(tmp_path):
    config = small_config("cleanup", roster=[{"kind": "innovator"}] + [{"kind": "imitator"}] * 4)
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(config))
    assert load_config(path) == config


def test_invalid_yaml_is_a_config_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("roster: [\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(path)


def test_shipped_configs_load():
    from pathlib import Path
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert paths
    for path in paths:
        load_config(path)


# --------------------------------------------------------------- metrics

def test_equality_examples():
    assert equality([10, 10, 10, 10, 10]) == (1.0, False)
    assert equality([5, 0, 0, 0, 0])[0] == pytest.approx(0.2)
    value, flagged = equality([-1, 1])
    assert flagged and value == pytest.approx(0.5)
    assert equality([0, 0]) == (1.0, True)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=6), st.randoms())
def test_equality_is_bounded_and_permutation_invariant(returns, rnd):
    value, _ = equality(returns)
    shuffled = list(returns)
    rnd.shuffle(shuffled)
    assert 0.0 <= value <= 1.0 + 1e-12
    assert equality(shuffled)[0] == pytest.approx(value)


def test_sustainability_examples():
    assert sustainability([500], 1000) == (0.5, False)
    assert sustainability([], 1000) == (0.0, True)
    assert sustainability([250, 750], 1000)[0] == pytest.approx(0.5)


def test_metrics_writer_appends_with_fixed_header(tmp_path):
    path = tmp_path / "m.csv"
    writer = MetricsWriter(path)
    writer.append({"a": 1, "b": 0.5})
    MetricsWriter(path).append({"a": 2, "b": 1.5})
    rows = read_metrics(path)
    assert [r["a"] for r in rows] == [1.0, 2.0]
    with pytest.raises(ValueError, match="do not match"):
        writer.append({"a": 3})


# ---------------------------------------------------------------- runner

@pytest.fixture(scope="module")
def coins_run(tmp_path_factory):
    config = small_config(roster=NETWORK_ROSTER, trace_log_episodes=4)
    return run_experiment(config, tmp_path_factory.mktemp("coins"))


def test_run_writes_manifest_metrics_and_checkpoints(coins_run):
    d = coins_run.directory
    manifest = read_manifest(d)
    assert manifest["seeds"] == [0] and manifest["episodes"] == 8
    rows = read_metrics(d / "seed_0" / "metrics.csv")
    assert [r["episodes"] for r in rows] == [4.0, 8.0]
    for name in ("agent_0.npz", "agent_1.npz", "agent_1_niceness.npz"):
        assert (d / "seed_0" / "checkpoints" / name).exists()
    assert (d / "seed_0" / "traces.npz").exists()


def test_collective_return_is_the_sum_of_environment_returns(coins_run):
    for row in coins_run.rows():
        assert row["collective_return"] == pytest.approx(row["return_0"] + row["return_1"])


def test_episode_return_excludes_intrinsic_reward():
    config = small_config(roster=[{"kind": "innovator"}, {"kind": "imitator"}])
    trainer = Trainer(config, 3)
    episodes, log = trainer.run_batch(learn=False, record=True)
    coin_rewards = np.array([e["returns"] for e in episodes])
    # own pickups +1, any pickup by the other agent -2 to the owner
    own = log["own_pickup"].sum(1)
    wrong = log["wrong_pickup"].sum(1)
    expected = own + wrong - 2 * wrong[:, ::-1]
    np.testing.assert_allclose(coin_rewards, expected)


def test_intrinsic_reward_uses_own_and_innovator_traces_only():
    roster = [{"kind": "innovator"}] + [{"kind": "imitator"}] * 4
    config = small_config("cleanup", roster=roster)
    trainer = Trainer(config, 0)
    episodes, log = trainer.run_batch(learn=False, record=True)
    increments = log["metric"]  # (B, L, n)
    decay = config.reciprocity.decay
    traces = np.zeros(increments.shape[::2])
    abs_sum = np.zeros_like(traces)
    for t in range(increments.shape[1]):
        traces = decay * traces + increments[:, t]
        abs_sum += (traces - traces[:, :1]) ** 2
    for i in range(1, 5):
        reported = np.array([e["mean_abs_intrinsic"][i] for e in episodes])
        np.testing.assert_allclose(reported, abs_sum[:, i] / increments.shape[1])


def test_same_seed_gives_byte_identical_metrics(tmp_path):
    config = small_config(roster=NETWORK_ROSTER, eval_episodes=4)
    run_experiment(config, tmp_path / "a")
    run_experiment(config, tmp_path / "b")
    a = (tmp_path / "a" / "seed_0" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "seed_0" / "metrics.csv").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_different_seeds_differ(tmp_path):
    result = run_experiment(small_config(), tmp_path, seeds=[0, 1])
    assert result.rows(0) != result.rows(1)


def test_rerun_replaces_metrics(tmp_path):
    config = small_config()
    run_experiment(config, tmp_path)
    run_experiment(config, tmp_path)
    assert len(read_metrics(tmp_path / "seed_0" / "metrics.csv")) == 2


def test_numerical_fault_saves_checkpoint_and_reraises(tmp_path, monkeypatch):
    calls = {"n": 0}
    original = Learner.update

    def flaky(self, *args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 2:
            raise NumericalFault("non-finite gradient")
        return original(self, *args, **kwargs)

    monkeypatch.setattr(Learner, "update", flaky)
    with pytest.raises(NumericalFault):
        run_experiment(small_config(), tmp_path)
    fault = json.loads((tmp_path / "seed_0" / "fault.json").read_text())
    assert "non-finite" in fault["error"]
    assert (tmp_path / "seed_0" / "checkpoints" / "agent_0.npz").exists()


def test_summarize_needs_episodes():
    with pytest.raises(ValueError):
        summarize([], 2)


# ------------------------------------------------------------- ablations

def _final_params(config, seed=0):
    trainer = Trainer(config, seed)
    for _ in range(2):
        trainer.run_batch()
    return [{k: v.copy() for k, v in a.policy.params.items()} for a in trainer.agents]


def _assert_same(pa, pb):
    for a, b in zip(pa, pb):
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


def test_kl_only_equals_zero_intrinsic_weight():
    base = small_config(roster=NETWORK_ROSTER, reciprocity={"c_kl": 0.1, "c_im": 0.5})
    ablated = with_ablation(base, "kl_only")
    reference = small_config(roster=NETWORK_ROSTER, reciprocity={"c_kl": 0.1, "c_im": 0.0})
    _assert_same(_final_params(ablated), _final_params(reference))


def test_intrinsic_only_equals_zero_kl_weight():
    base = small_config(roster=NETWORK_ROSTER, reciprocity={"c_kl": 0.1, "c_im": 0.5})
    ablated = with_ablation(base, "intrinsic_only")
    reference = small_config(roster=NETWORK_ROSTER, reciprocity={"c_kl": 0.0, "c_im": 0.5})
    _assert_same(_final_params(ablated), _final_params(reference))


def test_ablation_flags_change_training():
    base = small_config(roster=NETWORK_ROSTER, reciprocity={"c_kl": 0.1, "c_im": 0.5})
    with pytest.raises(AssertionError):
        _assert_same(_final_params(base), _final_params(with_ablation(base, "kl_only")))


def test_ablation_flag_errors(tmp_path):
    with pytest.raises(ConfigError):
        with_ablation(small_config(), "everything")
    with pytest.raises(ConfigError):
        small_config(ablation={"kl_only": True, "intrinsic_only": True})


def test_ablation_without_flags_matches_plain_run(tmp_path):
    config = small_config()
    ablation_run(config, tmp_path / "a")
    run_experiment(config, tmp_path / "b")
    assert ((tmp_path / "a" / "seed_0" / "metrics.csv").read_bytes()
            == (tmp_path / "b" / "seed_0" / "metrics.csv").read_bytes())


# ----------------------------------------------------------- instability

@pytest.fixture(scope="module")
def cleanup_checkpoint(tmp_path_factory):
    roster = [{"kind": "innovator"}] + [{"kind": "imitator"}] * 4
    config = small_config("cleanup", roster=roster)
    result = run_experiment(config, tmp_path_factory.mktemp("cleanup"))
    return config, result.directory / "seed_0" / "checkpoints" / "agent_0.npz"


def test_instability_row_zero_evaluates_the_loaded_policy(cleanup_checkpoint, tmp_path):
    config, ckpt = cleanup_checkpoint
    config = config.with_seeds([5])
    config.episodes = 0
    result = instability_study(ckpt, config, tmp_path)
    rows = result.rows()
    assert len(rows) == 1 and rows[0]["phase"] == "eval"
    trainer = Trainer(instability_config(config, ckpt), 5)
    episodes, _ = trainer.evaluate(config.learner.num_envs)
    expected = summarize(episodes, 5)
    for key, value in expected.items():
        assert rows[0][key] == pytest.approx(value)


def test_instability_copies_share_the_checkpoint(cleanup_checkpoint):
    config, ckpt = cleanup_checkpoint
    trainer = Trainer(instability_config(config, ckpt), 0)
    first = trainer.agents[0].policy.params
    for agent in trainer.agents[1:]:
        assert agent.kind == "innovator"
        for k in first:
            np.testing.assert_array_equal(agent.policy.params[k], first[k])


def test_frozen_copies_do_not_learn(cleanup_checkpoint, tmp_path):
    config, ckpt = cleanup_checkpoint
    result = instability_study(ckpt, config, tmp_path, frozen=True)
    trainer = result.seeds[0].trainer
    fresh = Trainer(instability_config(config, ckpt), 0).agents[0].policy.params
    for agent in trainer.agents:
        assert agent.learner is None
        for k, v in agent.policy.params.items():
            np.testing.assert_array_equal(v, fresh[k])


def test_instability_rejects_mismatched_checkpoint(cleanup_checkpoint, coins_run, tmp_path):
    config, _ = cleanup_checkpoint
    ckpt = coins_run.directory / "seed_0" / "checkpoints" / "agent_0.npz"
    with pytest.raises(CheckpointError):
        instability_study(ckpt, config, tmp_path)
    with pytest.raises(FileNotFoundError):
        instability_study(tmp_path / "missing.npz", config, tmp_path)


# ---------------------------------------------------------------- probes

def test_niceness_probe_requires_coins(cleanup_checkpoint):
    config, ckpt = cleanup_checkpoint
    run_dir = ckpt.parent.parent.parent
    with pytest.raises(ConfigError, match="Coins"):
        niceness_probe(run_dir, episodes=4)


def test_niceness_probe_requires_a_network(tmp_path):
    run_experiment(small_config(), tmp_path)
    with pytest.raises(ConfigError, match="niceness network"):
        niceness_probe(tmp_path, episodes=4)


def test_niceness_probe_buckets_cover_every_step(coins_run, tmp_path):
    report = niceness_probe(coins_run.directory, episodes=6, out=tmp_path)
    counts = sum(b["count"] for b in report["buckets"].values())
    L = coins_run.seeds[0].trainer.config.environment.episode_length
    assert counts == report["total_steps"] == 6 * L
    assert (tmp_path / "report.json").exists()
    lines = (tmp_path / "qdump.jsonl").read_text().splitlines()
    assert len(lines) == L
    assert set(json.loads(lines[0])) >= {"action", "bucket", "V", "Q", "niceness"}


def test_untrained_zero_network_predicts_zero_niceness(coins_run, tmp_path):
    import shutil
    run_dir = tmp_path / "run"
    shutil.copytree(coins_run.directory, run_dir)
    path = run_dir / "seed_0" / "checkpoints" / "agent_1_niceness.npz"
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    for k, v in arrays.items():
        if v.dtype.kind == "f":
            arrays[k] = np.zeros_like(v)
    np.savez(path, **arrays)
    report = niceness_probe(run_dir, episodes=4, out=tmp_path / "probe")
    for bucket in report["buckets"].values():
        assert bucket["mean"] == 0.0


def test_influence_probe_reports_both_directions(coins_run):
    report = influence_probe(coins_run.directory, max_lag=3)
    assert set(report["pairs"]) == {"0->1", "1->0"}
    assert len(report["pairs"]["0->1"]["by_lag"]) == 3
    metric = influence_probe(coins_run.directory, max_lag=2, stream="metric")
    assert set(metric["pairs"]) == {"0->1", "1->0"}


def test_influence_probe_needs_traces(tmp_path):
    run_experiment(small_config(), tmp_path)
    with pytest.raises(DataError, match="traces"):
        influence_probe(tmp_path)


def test_lagged_correlation_basics(rng):
    x = rng.normal(size=(20, 200))
    assert lagged_correlation(x, x, 0) == pytest.approx(1.0)
    y = np.roll(x, 2, axis=1)
    assert lagged_correlation(x, y, 2) == pytest.approx(1.0, abs=0.05)
    independent = rng.normal(size=(20, 200))
    assert abs(lagged_correlation(x, independent, 1)) < 0.05
    assert lagged_correlation(np.zeros((2, 5)), x[:2, :5], 1) == 0.0
    with pytest.raises(ValueError):
        lagged_correlation(x, x[:, :10], 1)


def test_config_file_drives_a_run(tmp_path):
    data = yaml.safe_load(dump_config(small_config()))
    data["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(data))
    result = run_experiment(load_config(path))
    assert result.directory == tmp_path / "out"
    assert config_from_dict(read_manifest(result.directory)["config"]) == load_config(path)
