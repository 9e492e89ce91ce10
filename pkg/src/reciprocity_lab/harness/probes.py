"""Post-training analyses of a run directory."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from .config import config_from_dict
from .metrics import mean_and_stderr
from .runner import read_manifest
from .training import Trainer

BUCKETS = ("wrong_pickup", "own_pickup", "no_pickup")


def _load(run_dir, seed):
    manifest = read_manifest(run_dir)
    config = config_from_dict(manifest["config"])
    seed = manifest["seeds"][0] if seed is None else int(seed)
    return config, seed, Path(run_dir) / f"seed_{seed}"


def niceness_probe(run_dir, episodes: int = 100, seed: int | None = None, out=None,
                   dump_episodes: int = 1) -> dict:
    """Bucket every innovator step by pickup outcome and average the predicted niceness.

    The imitator's niceness network scores each innovator action as ``Q - V``.
    Writes ``report.json`` and a per-frame ``qdump.jsonl`` to ``out``.
    """
    config, seed, seed_dir = _load(run_dir, seed)
    if config.env_name != "coins":
        raise ConfigError(f"the niceness probe needs a Coins run, got {config.env_name!r}")
    trainer = Trainer(config, seed)
    networked = [a for a in trainer.agents if a.uses_network]
    if not networked:
        raise ConfigError("the run has no imitator with a niceness network")
    trainer.load_checkpoints(seed_dir / "checkpoints")
    imitator = networked[0]
    inv = imitator.target
    B = config.learner.num_envs
    _, logs = trainer.evaluate(-(-episodes // B) * B, record=True)
    take = lambda key: np.concatenate([lg[key] for lg in logs])[:episodes]  # noqa: E731
    niceness = take("nn_inv")[..., 0]
    q = take("nn_inv_q")[..., 0, :]
    v = take("nn_inv_v")[..., 0]
    actions = take("actions")[..., inv]
    wrong = take("wrong_pickup")[..., inv].astype(bool)
    own = take("own_pickup")[..., inv].astype(bool) & ~wrong
    none = ~(wrong | own)

    report = {"seed": seed, "episodes": int(niceness.shape[0]), "innovator": inv,
              "imitator": imitator.agent_id, "total_steps": int(niceness.size), "buckets": {}}
    for name, mask in zip(BUCKETS, (wrong, own, none)):
        values = niceness[mask]
        mean, se = mean_and_stderr(values) if values.size else (0.0, 0.0)
        report["buckets"][name] = {"mean": mean, "stderr": se, "count": int(values.size)}

    out = Path(out) if out is not None else seed_dir / "niceness_probe"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    with open(out / "qdump.jsonl", "w") as fh:
        for e in range(min(dump_episodes, niceness.shape[0])):
            for t in range(niceness.shape[1]):
                bucket = BUCKETS[0] if wrong[e, t] else BUCKETS[1] if own[e, t] else BUCKETS[2]
                fh.write(json.dumps({"episode": e, "step": t, "action": int(actions[e, t]),
                                     "bucket": bucket, "V": float(v[e, t]),
                                     "Q": [float(x) for x in q[e, t]],
                                     "niceness": float(niceness[e, t])}) + "\n")
    return report


def lagged_correlation(x, y, lag: int) -> float:
    """Pearson correlation of ``x[t]`` with ``y[t + lag]``, pooled over episodes.

    ``x`` and ``y`` are (episodes, steps); each episode is centred separately so
    that correlations never straddle an episode boundary.  Returns 0 when either
    side has no variance.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"streams differ in shape: {x.shape} vs {y.shape}")
    if lag < 0:
        return lagged_correlation(y, x, -lag)
    if lag >= x.shape[1]:
        return 0.0
    a = x[:, :x.shape[1] - lag]
    b = y[:, lag:]
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def influence_probe(run_dir, max_lag: int = 5, stream: str = "auto", seed: int | None = None) -> dict:
    """Directed lagged correlations between innovator and imitator niceness-increment streams.

    ``score[i -> j]`` is the mean correlation of agent i's increments with agent
    j's increments 1..max_lag steps later.  ``stream`` picks the hand-coded
    metric increments or, for network imitators, the network's estimates.
    """
    manifest = read_manifest(run_dir)
    seeds = manifest["seeds"] if seed is None else [int(seed)]
    pairs: dict[str, list[list[float]]] = {}
    for s in seeds:
        path = Path(run_dir) / f"seed_{s}" / "traces.npz"
        if not path.exists():
            raise DataError(f"{path} missing; run with trace_log_episodes > 0")
        with np.load(path) as data:
            logs = {k: data[k] for k in data.files}
        for name, (x, y) in _streams(logs, stream).items():
            lags = [lagged_correlation(x, y, lag) for lag in range(1, max_lag + 1)]
            pairs.setdefault(name, []).append(lags)
    report = {"max_lag": max_lag, "seeds": list(seeds), "pairs": {}}
    for name, per_seed in pairs.items():
        arr = np.array(per_seed)
        report["pairs"][name] = {"by_lag": arr.mean(axis=0).tolist(), "score": float(arr.mean())}
    return report


def _streams(logs: dict, stream: str) -> dict:
    targets = logs["targets"]
    networked = list(logs["networked"])
    if stream == "auto":
        stream = "network" if networked else "metric"
    out = {}
    for im, inv in enumerate(targets):
        if inv < 0:
            continue
        if stream == "network":
            if im not in networked:
                continue
            k = networked.index(im)
            x_inv, x_im = logs["nn_inv"][..., k], logs["nn_im"][..., k]
        elif stream == "metric":
            x_inv, x_im = logs["metric"][..., inv], logs["metric"][..., im]
        else:
            raise ConfigError(f"stream must be 'auto', 'metric' or 'network', got {stream!r}")
        out[f"{inv}->{im}"] = (x_inv, x_im)
        out[f"{im}->{inv}"] = (x_im, x_inv)
    if not out:
        raise DataError("no innovator/imitator pair with logged increments")
    return out
