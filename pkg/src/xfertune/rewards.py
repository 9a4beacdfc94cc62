"""Reward objectives and the difference-based reward update.

Two objectives are supported: a fairness/efficiency utility that rewards
throughput while discounting stream count and penalizing loss, and a
throughput-per-energy ratio for energy-sensitive deployments. Both are turned
into the training signal by comparing the windowed metric against its
previous value with a dead-band.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .core import MiObservation

__all__ = [
    "RewardKind",
    "RewardConfig",
    "utility",
    "mean_utility",
    "energy_efficiency",
    "diff_reward",
    "reward_step",
]

BITS_PER_GBIT = 1e9


class RewardKind(str, Enum):
    FAIRNESS_EFFICIENCY = "fe"
    THROUGHPUT_ENERGY = "te"


@dataclass(frozen=True)
class RewardConfig:
    """Constants for both objectives and the dead-band update.

    k_const discounts throughput by stream count (must exceed 1 so more
    streams cost something), b_const weights the loss penalty, sc_const
    scales the energy-efficiency ratio, and epsilon/pos_reward/neg_reward
    shape the difference-based reward.

    window_n defaults per objective: 1 for fairness/efficiency (the utility
    is meaningful per MI, and a rolling mean lets agents bank the same level
    change repeatedly through the refill lag), 5 for throughput-energy
    (the max-energy aggregation is the objective's defining conservatism
    and needs a window to aggregate over).

    neg_reward defaults to -3 * pos_reward. With symmetric magnitudes, a
    single-action metric collapse costs one clipped penalty while the
    staged recovery earns a bonus per rising step, so cycling parameters
    through congestion turns a profit; recovery paths here stage at most
    three rising steps per one-action drop, so a 3x penalty makes every
    closed action cycle non-positive.
    """

    kind: RewardKind = RewardKind.FAIRNESS_EFFICIENCY
    k_const: float = 1.02
    b_const: float = 100.0
    sc_const: float = 20.0
    epsilon: float = 0.05
    pos_reward: float = 2.0
    neg_reward: float = -6.0
    window_n: int | None = None

    def __post_init__(self) -> None:
        if self.k_const <= 1.0:
            raise ValueError("k_const must be > 1")
        if self.pos_reward <= 0 or self.neg_reward >= 0:
            raise ValueError("pos_reward must be > 0 and neg_reward < 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.window_n is None:
            default = 1 if self.kind is RewardKind.FAIRNESS_EFFICIENCY else 5
            object.__setattr__(self, "window_n", default)
        if self.window_n < 1:
            raise ValueError("window_n must be >= 1")


def utility(
    throughput: float, loss: float, cc: int, p: int, k_const: float, b_const: float
) -> float:
    """Throughput utility discounted by stream count and penalized by loss.

    Throughput enters in Gbit/s so the metric stays O(1) at 10 Gbps scale:
    T / K^(cc*p) - T * L * B.
    """
    if throughput < 0:
        raise ValueError("throughput must be >= 0")
    if not 0.0 <= loss <= 1.0:
        raise ValueError("loss must lie in [0, 1]")
    if cc < 1 or p < 1:
        raise ValueError("cc and p must be >= 1")
    t_gbit = throughput / BITS_PER_GBIT
    return t_gbit / k_const ** (cc * p) - t_gbit * loss * b_const


def _check_window(window: Sequence[MiObservation], cfg: RewardConfig) -> None:
    if len(window) != cfg.window_n:
        raise ValueError(f"window must hold exactly {cfg.window_n} observations, got {len(window)}")


def mean_utility(window: Sequence[MiObservation], cfg: RewardConfig) -> float:
    """Arithmetic mean of per-MI utilities over the window."""
    _check_window(window, cfg)
    return sum(
        utility(o.throughput, o.plr, o.cc, o.p, cfg.k_const, cfg.b_const) for o in window
    ) / len(window)


def energy_efficiency(window: Sequence[MiObservation], cfg: RewardConfig) -> float:
    """Windowed throughput per unit energy: mean throughput (Gbit/s) * SC
    over the window's maximum per-MI energy.

    The max aggregation makes the metric conservative: one expensive MI in
    the window dominates until it ages out.
    """
    _check_window(window, cfg)
    max_energy = max(o.energy for o in window)
    if max_energy <= 0:
        raise ValueError("window max energy must be > 0 for the efficiency ratio")
    mean_t_gbit = sum(o.throughput for o in window) / len(window) / BITS_PER_GBIT
    return mean_t_gbit * cfg.sc_const / max_energy


def diff_reward(curr_metric: float, prev_metric: float, cfg: RewardConfig) -> float:
    """Dead-banded improvement signal: +x above epsilon, y below -epsilon, else 0."""
    diff = curr_metric - prev_metric
    if diff > cfg.epsilon:
        return cfg.pos_reward
    if diff < -cfg.epsilon:
        return cfg.neg_reward
    return 0.0


def reward_step(
    kind: RewardKind,
    window: Sequence[MiObservation],
    prev_metric: float | None,
    cfg: RewardConfig,
) -> tuple[float, float]:
    """Compute the kind's windowed metric and its difference-based reward.

    Returns (reward, metric) so the caller can thread the metric forward.
    ``prev_metric=None`` bootstraps the episode: the first reward is 0.
    """
    if kind is RewardKind.FAIRNESS_EFFICIENCY:
        metric = mean_utility(window, cfg)
    elif kind is RewardKind.THROUGHPUT_ENERGY:
        metric = energy_efficiency(window, cfg)
    else:
        raise ValueError(f"unknown reward kind: {kind!r}")
    if prev_metric is None:
        prev_metric = metric
    return diff_reward(metric, prev_metric, cfg), metric
