"""Synthetic data generation, offline metrics and closed-loop evaluation."""
from imit2d.harness.closed_loop import (
    ClosedLoopConfig,
    EpisodeResult,
    rescore,
    run_closed_loop,
    run_episode,
    summarize,
    wilson_interval,
)
from imit2d.harness.episodes import (
    Episode,
    LaunchDistribution,
    generate_dataset,
    read_episode,
    write_episode,
)
from imit2d.harness.metrics import metric_dtw, metric_icp, metric_jerk, metric_rmse
from imit2d.harness.offline import OraclePolicy, dataset_windows, episode_windows, evaluate_offline
from imit2d.harness.sim import SimConfig, scripted_expert, simulate, truth_rollout

__all__ = [
    "ClosedLoopConfig", "EpisodeResult", "rescore", "run_closed_loop", "run_episode", "summarize",
    "wilson_interval", "Episode", "LaunchDistribution", "generate_dataset", "read_episode",
    "write_episode", "metric_dtw", "metric_icp", "metric_jerk", "metric_rmse", "OraclePolicy",
    "dataset_windows", "episode_windows", "evaluate_offline", "SimConfig", "scripted_expert",
    "simulate", "truth_rollout",
]
