"""Deterministic, seedable model of a shared bottleneck link.

One tick maps the offered load (total streams plus background traffic) to a
link-wide loss rate and RTT, then caps each flow's throughput by its own
stream model, its per-stream saturation rate, and its fair share. Loss grows
quadratically in relative overload so the loss-based stream throughput model
stays inside its small-loss validity domain near the knee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rewards
from .core import (
    Action,
    Bounds,
    FeatureScaler,
    MiObservation,
    StateWindow,
    TransferParams,
    apply_action,
    featurize,
)

__all__ = [
    "LinkConfig",
    "EnergyConfig",
    "EnvConfig",
    "FlowState",
    "LinkTickResult",
    "mathis_throughput",
    "aggregate_throughput",
    "bg_sample",
    "energy_per_mi",
    "link_tick",
    "SyntheticEnv",
]


@dataclass(frozen=True)
class LinkConfig:
    """Bottleneck link parameters, SI units.

    Defaults model a 10 Gbps shared path with a 34.6 ms base RTT. The
    per-stream saturation rate of 170 Mbps anchors the model to the
    reference measurement of 8.32 Gbps from 49 clean streams: at that rate
    a (7,7) transfer on the empty link reproduces that observation exactly
    (floor loss, base RTT).
    """

    capacity_b: float = 10e9
    base_rtt: float = 0.0346
    mss: int = 1500
    mathis_c: float = 1.0
    loss_floor: float = 1e-6
    loss_kappa: float = 0.02
    rtt_q: float = 0.5
    per_stream_rate: float = 170e6
    bg_levels: tuple[float, ...] = (0.0, 0.8e9, 1.67e9, 9.5e9)
    bg_hold: float = 30.0
    mi_duration: float = 1.0

    def __post_init__(self) -> None:
        if self.capacity_b <= 0 or self.base_rtt <= 0 or self.per_stream_rate <= 0:
            raise ValueError("capacity_b, base_rtt and per_stream_rate must be > 0")
        if not 0.0 <= self.loss_floor < 1.0:
            raise ValueError("loss_floor must lie in [0, 1)")
        if self.mi_duration <= 0:
            raise ValueError("mi_duration must be > 0")
        if any(not 0.0 <= lvl <= self.capacity_b for lvl in self.bg_levels):
            raise ValueError("bg_levels must lie within [0, capacity_b]")


@dataclass(frozen=True)
class EnergyConfig:
    """Linear end-system energy model.

    joule_per_stream_s charges for keeping a stream active, joule_per_gbit
    for delivered traffic, retx_penalty for retransmitted traffic. Defaults
    put 49 streams at 8.32 Gbit/s near 80 J per one-second MI.
    """

    joule_per_stream_s: float = 0.8
    joule_per_gbit: float = 4.9
    retx_penalty: float = 50.0

    def __post_init__(self) -> None:
        if min(self.joule_per_stream_s, self.joule_per_gbit, self.retx_penalty) < 0:
            raise ValueError("energy coefficients must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    """Episode shape shared by the synthetic and lookup environments.

    ``random_init`` starts each episode from a uniformly drawn diagonal
    setting instead of (initial_cc, initial_p); training uses it for start
    diversity, mirroring how the lookup environment draws its initial state
    from the recorded data. Evaluation keeps the fixed midpoint start.
    """

    history_n: int = 5
    horizon: int = 128
    initial_cc: int = 4
    initial_p: int = 4
    start_time: float = 0.0
    random_init: bool = False

    def __post_init__(self) -> None:
        if self.history_n < 1 or self.horizon < 1:
            raise ValueError("history_n and horizon must be >= 1")


@dataclass(frozen=True)
class FlowState:
    """One transfer's parameters plus its cumulative delivery counters."""

    params: TransferParams
    cumulative_bits: float = 0.0
    cumulative_energy: float = 0.0


@dataclass(frozen=True)
class LinkTickResult:
    observations: tuple[MiObservation, ...]
    flows: tuple[FlowState, ...]
    bg_used: float
    aggregate_offered: float
    loss: float
    rtt: float


def mathis_throughput(mss: int, rtt: float, loss: float, c: float) -> float:
    """Loss-based steady-state throughput of one TCP stream, bits/s.

    (mss * 8 / rtt) * (c / sqrt(loss)); valid for small loss rates, so
    callers clamp loss below at the link's loss floor.
    """
    if loss <= 0:
        raise ValueError("loss must be > 0")
    if rtt <= 0:
        raise ValueError("rtt must be > 0")
    return (mss * 8.0 / rtt) * (c / math.sqrt(loss))


def aggregate_throughput(per_stream: Sequence[tuple[int, float, float]], c: float) -> float:
    """Sum of per-stream throughputs for (mss, rtt, loss) triples."""
    if not per_stream:
        raise ValueError("per_stream must be nonempty")
    return sum(mathis_throughput(mss, rtt, loss, c) for mss, rtt, loss in per_stream)


def bg_sample(rng: np.random.Generator, cfg: LinkConfig) -> float:
    """Draw one background-traffic level; the caller holds it for bg_hold."""
    if not cfg.bg_levels:
        raise ValueError("bg_levels must be nonempty")
    return float(cfg.bg_levels[rng.integers(len(cfg.bg_levels))])


def energy_per_mi(
    n_streams: int, throughput: float, loss: float, dt: float, ecfg: EnergyConfig
) -> float:
    """Joules consumed by one flow over one MI."""
    if min(n_streams, throughput, loss, dt) < 0:
        raise ValueError("inputs must be >= 0")
    t_gbit = throughput / rewards.BITS_PER_GBIT
    return (
        ecfg.joule_per_stream_s * n_streams
        + ecfg.joule_per_gbit * t_gbit
        + ecfg.retx_penalty * t_gbit * loss
    ) * dt


def link_tick(
    cfg: LinkConfig,
    ecfg: EnergyConfig,
    flows: Sequence[FlowState],
    bg: float,
    timestamp: float = 0.0,
    reward_cfg: rewards.RewardConfig | None = None,
) -> LinkTickResult:
    """Advance the shared link by one MI.

    Offered load O = total streams * per-stream rate + bg. At or below
    capacity the link is clean (floor loss, base RTT); above it, loss grows
    quadratically and RTT linearly in the relative overload. Each flow then
    receives the minimum of its aggregate stream throughput, its stream-rate
    cap, and its fair share (background counts as phantom streams).
    """
    if not flows:
        raise ValueError("flows must be nonempty")
    if not 0.0 <= bg <= cfg.capacity_b:
        raise ValueError("bg must lie within [0, capacity_b]")
    if reward_cfg is None:
        reward_cfg = rewards.RewardConfig()

    n_total = sum(f.params.n_streams for f in flows)
    offered = n_total * cfg.per_stream_rate + bg
    if offered <= cfg.capacity_b:
        loss = cfg.loss_floor
        rtt = cfg.base_rtt
    else:
        overload = (offered - cfg.capacity_b) / cfg.capacity_b
        loss = min(cfg.loss_floor + cfg.loss_kappa * overload**2, 1.0)
        rtt = cfg.base_rtt * (1.0 + cfg.rtt_q * overload)

    bg_equiv = bg / cfg.per_stream_rate
    per_stream = mathis_throughput(cfg.mss, rtt, max(loss, cfg.loss_floor), cfg.mathis_c)

    observations = []
    new_flows = []
    total_flow_throughput = 0.0
    for flow in flows:
        n = flow.params.n_streams
        fair_share = n / (n_total + bg_equiv) * cfg.capacity_b
        throughput = min(n * per_stream, n * cfg.per_stream_rate, fair_share)
        total_flow_throughput += throughput
        energy = energy_per_mi(n, throughput, loss, cfg.mi_duration, ecfg)
        score = rewards.utility(
            throughput, loss, flow.params.cc, flow.params.p,
            reward_cfg.k_const, reward_cfg.b_const,
        )
        observations.append(
            MiObservation(
                timestamp=timestamp,
                throughput=throughput,
                plr=loss,
                mean_rtt=rtt,
                energy=energy,
                cc=flow.params.cc,
                p=flow.params.p,
                score=score,
            )
        )
        new_flows.append(
            replace(
                flow,
                cumulative_bits=flow.cumulative_bits + throughput * cfg.mi_duration,
                cumulative_energy=flow.cumulative_energy + energy,
            )
        )

    bg_used = min(bg, bg_equiv / (n_total + bg_equiv) * cfg.capacity_b) if bg > 0 else 0.0
    if total_flow_throughput + bg_used > cfg.capacity_b * (1.0 + 1e-9):
        raise AssertionError("link capacity conservation violated")
    return LinkTickResult(
        observations=tuple(observations),
        flows=tuple(new_flows),
        bg_used=bg_used,
        aggregate_offered=offered,
        loss=loss,
        rtt=rtt,
    )


class SyntheticEnv:
    """Single-flow episodic environment over the synthetic link.

    Owns the flow state, the background-traffic process, the observation
    history and the session RTT minimum. ``bg_schedule`` optionally pins the
    background level from given MI indices onward (used by congestion
    injection experiments); otherwise levels are sampled every bg_hold
    seconds from the seeded generator.
    """

    def __init__(
        self,
        link_cfg: LinkConfig | None = None,
        energy_cfg: EnergyConfig | None = None,
        bounds: Bounds | None = None,
        env_cfg: EnvConfig | None = None,
        seed: int = 0,
        bg_schedule: Sequence[tuple[int, float]] | None = None,
    ) -> None:
        self.link_cfg = link_cfg or LinkConfig()
        self.energy_cfg = energy_cfg or EnergyConfig()
        self.bounds = bounds or Bounds()
        self.env_cfg = env_cfg or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.bg_schedule = sorted(bg_schedule) if bg_schedule else None
        self.feature_scaler = FeatureScaler.from_bounds(self.bounds)
        self._ticks_per_hold = max(
            1, round(self.link_cfg.bg_hold / self.link_cfg.mi_duration)
        )
        self._flow: FlowState | None = None
        self._history: list[MiObservation] = []
        self._min_rtt = math.inf
        self._mi_index = 0
        self._bg = 0.0

    @property
    def history_n(self) -> int:
        return self.env_cfg.history_n

    @property
    def horizon(self) -> int:
        return self.env_cfg.horizon

    @property
    def params(self) -> TransferParams:
        assert self._flow is not None, "reset() before reading params"
        return self._flow.params

    def _current_bg(self) -> float:
        if self.bg_schedule is not None:
            level = self.bg_schedule[0][1]
            for start, lvl in self.bg_schedule:
                if self._mi_index >= start:
                    level = lvl
            return level
        if self._mi_index % self._ticks_per_hold == 0:
            self._bg = bg_sample(self.rng, self.link_cfg)
        return self._bg

    def _tick(self) -> MiObservation:
        bg = self._current_bg()
        ts = self.env_cfg.start_time + self._mi_index * self.link_cfg.mi_duration
        result = link_tick(self.link_cfg, self.energy_cfg, [self._flow], bg, timestamp=ts)
        self._flow = result.flows[0]
        obs = result.observations[0]
        self._history.append(obs)
        self._min_rtt = min(self._min_rtt, obs.mean_rtt)
        self._mi_index += 1
        return obs

    def reset(self) -> tuple[StateWindow, MiObservation]:
        if self.env_cfg.random_init:
            hi = min(self.bounds.cc_max, self.bounds.p_max)
            while True:
                k = int(self.rng.integers(self.bounds.cc_min, hi + 1))
                if self.bounds.contains(TransferParams(k, k)):
                    break
            params = TransferParams(k, k)
        else:
            params = TransferParams(self.env_cfg.initial_cc, self.env_cfg.initial_p)
        if not self.bounds.contains(params):
            raise ValueError("initial parameters violate bounds")
        self._flow = FlowState(params=params)
        self._history = []
        self._min_rtt = math.inf
        self._mi_index = 0
        obs = self._tick()
        return self.window(), obs

    def step(self, action: Action) -> tuple[StateWindow, MiObservation, bool]:
        assert self._flow is not None, "reset() before step()"
        self._flow = replace(
            self._flow, params=apply_action(self._flow.params, action, self.bounds)
        )
        obs = self._tick()
        # The reset tick produced the first observation; the horizon counts
        # agent actions after it.
        done = self._mi_index - 1 >= self.env_cfg.horizon
        return self.window(), obs, done

    def window(self) -> StateWindow:
        return featurize(self._history, self._min_rtt, self.env_cfg.history_n)
