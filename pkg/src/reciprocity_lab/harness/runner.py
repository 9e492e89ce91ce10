"""Run directories: per-seed training, ablations and the innovator-copies study.

Layout of a run directory::

    manifest.json
    seed_<s>/metrics.csv
    seed_<s>/checkpoints/agent_<k>.npz   (+ agent_<k>_niceness.npz)
    seed_<s>/traces.npz                  (when trace_log_episodes > 0)
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..errors import ConfigError, NumericalFault
from ..nn import CHECKPOINT_VERSION
from .config import INNOVATOR, ExperimentConfig
from .metrics import SCHEMA_VERSION, MetricsWriter
from .training import Trainer, summarize

log = logging.getLogger(__name__)

ABLATION_MODES = ("kl_only", "intrinsic_only")


@dataclasses.dataclass
class SeedResult:
    seed: int
    directory: Path
    rows: list[dict]
    trainer: Trainer


@dataclasses.dataclass
class RunResult:
    directory: Path
    seeds: list[SeedResult]

    def rows(self, seed_index: int = 0) -> list[dict]:
        return self.seeds[seed_index].rows


def write_manifest(directory: Path, config: ExperimentConfig, extra: dict | None = None) -> Path:
    manifest = {
        "package_version": __version__,
        "metrics_schema_version": SCHEMA_VERSION,
        "checkpoint_version": CHECKPOINT_VERSION,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "seeds": list(config.seeds),
        "episodes": config.episodes,
        "eval_every": config.eval_every,
        "config": config.to_dict(),
        **(extra or {}),
    }
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False))
    return path


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; is this a run directory?")
    return json.loads(path.read_text())


def train_seed(config: ExperimentConfig, seed: int, directory: Path,
               progress: Callable[[dict], None] | None = None, render=None) -> SeedResult:
    """Train one seed, writing metrics at the configured cadence and final checkpoints."""
    directory.mkdir(parents=True, exist_ok=True)
    metrics_path = directory / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()  # a fresh run replaces, never extends, an old file
    writer = MetricsWriter(metrics_path)
    trainer = Trainer(config, seed)
    n = trainer.env.num_agents
    rows: list[dict] = []

    def emit(phase: str, window_episodes: list[dict]) -> None:
        row = {"window": len(rows), "phase": phase, "episodes": trainer.episodes_done,
               **summarize(window_episodes, n)}
        writer.append(row)
        rows.append(row)
        if progress is not None:
            progress(row)

    if config.eval_episodes:
        episodes, _ = trainer.evaluate(config.eval_episodes, render=render)
        emit("eval", episodes)
        render = None
    pending: list[dict] = []
    B = config.learner.num_envs
    try:
        for _ in range(config.episodes // B):
            episodes, _ = trainer.run_batch(learn=True, render=render)
            render = None
            pending.extend(episodes)
            if len(pending) >= config.eval_every:
                emit("train", pending)
                pending = []
    except NumericalFault as exc:
        saved = trainer.save_checkpoints(directory / "checkpoints")
        (directory / "fault.json").write_text(json.dumps(
            {"error": str(exc), "episodes": trainer.episodes_done, "checkpoints": [str(p) for p in saved]},
            indent=2))
        log.error("numerical fault in seed %d after %d episodes; last good checkpoint saved",
                  seed, trainer.episodes_done)
        raise
    if pending:
        emit("train", pending)
    trainer.save_checkpoints(directory / "checkpoints")
    if config.trace_log_episodes:
        save_traces(trainer, config.trace_log_episodes, directory / "traces.npz")
    return SeedResult(seed, directory, rows, trainer)


def save_traces(trainer: Trainer, episodes: int, path: Path) -> Path:
    """Frozen-policy rollouts with per-step niceness increments, for the influence probe."""
    _, logs = trainer.evaluate(episodes, record=True)
    arrays = {key: np.concatenate([lg[key] for lg in logs]) for key in logs[0] if key != "networked"}
    arrays["networked"] = logs[0]["networked"]
    arrays["targets"] = np.array([trainer.config.target_of(i) if a.is_imitator else -1
                                  for i, a in enumerate(trainer.agents)], dtype=np.int64)
    np.savez(path, **arrays)
    return path


def run_experiment(config: ExperimentConfig, out=None, seeds=None,
                   progress: Callable[[dict], None] | None = None, render=None,
                   manifest_extra: dict | None = None) -> RunResult:
    """Train every seed into ``out`` (default: ``config.output_dir``)."""
    if seeds is not None:
        config = config.with_seeds(seeds)
    config.validate()
    directory = Path(out if out is not None else config.output_dir)
    write_manifest(directory, config, manifest_extra)
    results = []
    for seed in config.seeds:
        log.info("seed %d -> %s", seed, directory / f"seed_{seed}")
        results.append(train_seed(config, seed, directory / f"seed_{seed}", progress, render))
        render = None
    return RunResult(directory, results)


def with_ablation(config: ExperimentConfig, mode: str) -> ExperimentConfig:
    if mode not in ABLATION_MODES:
        raise ConfigError(f"ablation mode must be one of {ABLATION_MODES}, got {mode!r}")
    out = copy.deepcopy(config)
    setattr(out.ablation, mode, True)
    return out


def ablation_run(config: ExperimentConfig, out=None, **kwargs) -> RunResult:
    """``run_experiment`` with at most one imitation component switched off.

    ``kl_only`` drops the intrinsic reward; ``intrinsic_only`` drops the KL
    term.  With neither flag set this is a plain run.
    """
    active = [m for m in ABLATION_MODES if getattr(config.ablation, m)]
    if len(active) > 1:
        raise ConfigError(f"an ablation run takes one of {ABLATION_MODES}; got {active}")
    extra = {"ablation": active[0] if active else None}
    return run_experiment(config, out, manifest_extra=extra, **kwargs)


def instability_config(config: ExperimentConfig, checkpoint, frozen: bool = False) -> ExperimentConfig:
    """Every roster slot becomes an innovator initialised from ``checkpoint``."""
    out = copy.deepcopy(config)
    for spec in out.roster:
        spec.kind = INNOVATOR
        spec.niceness_source = None
        spec.imitates = None
        spec.checkpoint = str(checkpoint)
    out.ablation.frozen_innovator_copies = frozen or out.ablation.frozen_innovator_copies
    if out.eval_episodes == 0:
        out.eval_episodes = out.learner.num_envs
    return out


def instability_study(checkpoint, config: ExperimentConfig, out=None, frozen: bool = False,
                      **kwargs) -> RunResult:
    """Continue training copies of one innovator; metrics row 0 evaluates the loaded policy."""
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} not found")
    study = instability_config(config, checkpoint, frozen)
    return run_experiment(study, out, manifest_extra={"instability_checkpoint": str(checkpoint),
                                                      "frozen_copies": study.ablation.frozen_innovator_copies},
                          **kwargs)
