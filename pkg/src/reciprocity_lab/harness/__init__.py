"""Experiment orchestration: configs, training loop, metrics, studies and probes."""
from .config import AblationFlags, AgentSpec, ExperimentConfig, config_from_dict, dump_config, load_config
from .metrics import MetricsWriter, equality, gini, mean_and_stderr, read_metrics, sustainability
from .probes import influence_probe, lagged_correlation, niceness_probe
from .runner import (
    RunResult,
    ablation_run,
    instability_config,
    instability_study,
    read_manifest,
    run_experiment,
    with_ablation,
)
from .training import Trainer, summarize

__all__ = [
    "AblationFlags", "AgentSpec", "ExperimentConfig", "MetricsWriter", "RunResult", "Trainer",
    "ablation_run", "config_from_dict", "dump_config", "equality", "gini", "influence_probe",
    "instability_config", "instability_study", "lagged_correlation", "load_config", "mean_and_stderr",
    "niceness_probe", "read_manifest", "read_metrics", "run_experiment", "summarize", "sustainability",
    "with_ablation",
]
