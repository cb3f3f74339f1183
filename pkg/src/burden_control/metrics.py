"""Performance series measured against the true-parameter policy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simulator import Trajectory
from .vi import PolicyTable

MOVING_WINDOW = 28


@dataclass
class MetricsSeries:
    cumulative_avg_reward: np.ndarray
    cumulative_optimal_fraction: np.ndarray
    moving_avg_optimal_fraction: np.ndarray
    is_optimal: np.ndarray
    oracle_actions: np.ndarray

    def __len__(self) -> int:
        return len(self.cumulative_avg_reward)

    def at_day(self, day: int) -> dict:
        """Values after ``day`` decision epochs (1-based)."""
        i = day - 1
        return {
            "cumulative_avg_reward": float(self.cumulative_avg_reward[i]),
            "cumulative_optimal_fraction": float(self.cumulative_optimal_fraction[i]),
            "moving_avg_optimal_fraction": float(self.moving_avg_optimal_fraction[i]),
        }


def cumulative_mean(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, len(values) + 1)


def trailing_mean(values, window: int = MOVING_WINDOW) -> np.ndarray:
    """Mean over the last ``min(window, t + 1)`` entries at each t."""
    values = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    t = np.arange(1, len(values) + 1)
    start = np.maximum(t - window, 0)
    return (csum[t] - csum[start]) / (t - start)


def series_from_arrays(rewards, actions, latent_states, oracle: PolicyTable,
                       window: int = MOVING_WINDOW) -> MetricsSeries:
    oracle_actions = oracle.actions_at(latent_states)
    optimal = np.asarray(actions, dtype=np.int8) == oracle_actions
    return MetricsSeries(
        cumulative_avg_reward=cumulative_mean(rewards),
        cumulative_optimal_fraction=cumulative_mean(optimal),
        moving_avg_optimal_fraction=trailing_mean(optimal, window),
        is_optimal=optimal,
        oracle_actions=oracle_actions,
    )


def compute_metrics(traj: Trajectory, oracle: PolicyTable,
                    window: int = MOVING_WINDOW) -> MetricsSeries:
    """Score a trajectory against an oracle built from its own true parameters."""
    if not math.isclose(oracle.grid.x_max, traj.params.x_bar, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("oracle grid does not cover the trajectory's state space")
    return series_from_arrays(traj.rewards, [int(a) for a in traj.actions],
                              traj.latent_states, oracle, window)


def mean_across(series: list[MetricsSeries]) -> dict[str, np.ndarray]:
    """Per-day arithmetic means of each series over replications."""
    if not series:
        raise ValueError("no replications to average")
    fields = ("cumulative_avg_reward", "cumulative_optimal_fraction", "moving_avg_optimal_fraction")
    return {f: np.mean([getattr(s, f) for s in series], axis=0) for f in fields}
