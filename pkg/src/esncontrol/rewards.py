"""Reward scheme and episode-level metrics.

Each sample step accrues a penalty of ``r_event`` while the observable exceeds
the event threshold and a penalty of ``r_control`` while the actuation is
active; both apply additively on steps where both hold. All other steps score
zero. Episode metrics are the mean step reward R and the event/control step
ratios P_e = N_e / N and P_c = N_c / N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mfe import Trajectory


@dataclass(frozen=True)
class RewardConfig:
    k_e: float = 0.1
    r_event: float = -1.0
    r_control: float = -0.15

    def __post_init__(self):
        if not self.r_event < self.r_control < 0:
            raise ValueError("required ordering: r_event < r_control < 0")


@dataclass(frozen=True)
class EpisodeMetrics:
    avg_reward: float
    p_event: float
    p_control: float
    n_steps: int
    n_event: int
    n_control: int


def step_reward(k, controlled, cfg: RewardConfig):
    """Reward of a single step (or elementwise over arrays of steps)."""
    k = np.asarray(k, dtype=np.float64)
    controlled = np.asarray(controlled, dtype=bool)
    r = cfg.r_event * (k > cfg.k_e) + cfg.r_control * controlled
    return float(r) if r.ndim == 0 else r


def metrics_from_samples(k: np.ndarray, controlled: np.ndarray,
                         cfg: RewardConfig) -> EpisodeMetrics:
    """Metrics over raw per-sample arrays; the core of :func:`episode_metrics`."""
    n = len(k)
    if n == 0:
        raise ValueError("empty trajectory")
    n_event = int(np.sum(k > cfg.k_e))
    n_control = int(np.sum(controlled))
    avg = (cfg.r_event * n_event + cfg.r_control * n_control) / n
    return EpisodeMetrics(avg_reward=avg, p_event=n_event / n, p_control=n_control / n,
                          n_steps=n, n_event=n_event, n_control=n_control)


def episode_metrics(traj: Trajectory, cfg: RewardConfig,
                    re_base: float = 400.0) -> EpisodeMetrics:
    """Average reward and event/control ratios of one episode.

    A step counts as controlled when its action differs from the no-control
    Reynolds number ``re_base``.
    """
    return metrics_from_samples(traj.k, traj.re != re_base, cfg)
