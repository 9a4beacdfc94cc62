"""Experiment orchestration: training over either environment, evaluation
rollouts, static parameter sweeps, multi-flow fairness runs on a shared link,
and the amortized train-versus-inference cost analysis."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import DQNAgent, PPOAgent, TrainConfig, TrainingDiverged
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
from .nets import PolicyModel
from .rewards import RewardConfig, RewardKind, reward_step
from .simnet import EnergyConfig, EnvConfig, FlowState, LinkConfig, bg_sample, link_tick

__all__ = [
    "EpisodeTrace",
    "CostModel",
    "TrainResult",
    "EvalResult",
    "GreedyPolicy",
    "StaticPolicy",
    "FlowSpec",
    "FairnessResult",
    "train",
    "evaluate",
    "sweep_static",
    "jain_index",
    "fairness_experiment",
    "retreat_experiment",
    "amortized_cost",
    "REFERENCE_COSTS",
    "write_metrics_csv",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class EpisodeTrace:
    """Per-step record of one episode plus its aggregates."""

    windows: tuple[StateWindow, ...]
    actions: tuple[Action, ...]
    rewards: tuple[float, ...]
    observations: tuple[MiObservation, ...]
    episode_return: float
    mean_throughput: float
    total_energy: float
    mean_streams: float


@dataclass(frozen=True)
class CostModel:
    """Energy cost of training once and of every inference step."""

    train_energy: float
    inference_energy: float

    def __post_init__(self) -> None:
        if self.train_energy < 0 or self.inference_energy < 0:
            raise ValueError("energies must be >= 0")


# Published per-method operating costs (training kJ, per-inference J) used by
# the cost tool as convenient presets.
REFERENCE_COSTS: dict[str, CostModel] = {
    "dqn": CostModel(131e3, 0.098),
    "ppo": CostModel(158e3, 0.088),
    "ddpg": CostModel(294e3, 0.091),
    "r_ppo": CostModel(221e3, 0.094),
    "drqn": CostModel(214e3, 0.088),
}


class _RewardTracker:
    """Threads the windowed metric through an episode."""

    def __init__(self, cfg: RewardConfig) -> None:
        self.cfg = cfg
        self._obs: deque[MiObservation] = deque(maxlen=cfg.window_n)
        self._prev_metric: float | None = None

    def push(self, obs: MiObservation) -> None:
        self._obs.append(obs)

    def window(self) -> list[MiObservation]:
        if not self._obs:
            raise ValueError("no observations recorded yet")
        pad = [self._obs[0]] * (self.cfg.window_n - len(self._obs))
        return pad + list(self._obs)

    def step_reward(self, obs: MiObservation) -> float:
        self.push(obs)
        reward, metric = reward_step(self.cfg.kind, self.window(), self._prev_metric, self.cfg)
        self._prev_metric = metric
        return reward


@dataclass
class TrainResult:
    model: PolicyModel
    kind: str
    scaler: FeatureScaler
    history_n: int
    learning_curve: list[float]


def _make_agent(kind: str, cfg: TrainConfig, input_dim: int):
    if kind == "dqn":
        return DQNAgent(cfg, input_dim)
    if kind == "ppo":
        return PPOAgent(cfg, input_dim)
    raise ValueError(f"unknown agent kind: {kind!r}")


def train(env, agent_kind: str, tcfg: TrainConfig, rcfg: RewardConfig) -> TrainResult:
    """Run the training loop until ``total_steps`` environment steps.

    Episodes reset the environment and the reward tracker; transitions feed
    the replay buffer (value learning) or the rollout (policy optimization),
    with updates at each algorithm's cadence. Non-finite parameters abort.
    """
    scaler: FeatureScaler = env.feature_scaler
    input_dim = env.history_n * 5
    agent = _make_agent(agent_kind, tcfg, input_dim)
    curve: list[float] = []
    step = 0
    while step < tcfg.total_steps:
        window, obs0 = env.reset()
        tracker = _RewardTracker(rcfg)
        if obs0 is not None:
            tracker.push(obs0)
        state_vec = scaler.scale_window(window)
        episode_return = 0.0
        done = False
        while not done and step < tcfg.total_steps:
            if agent_kind == "dqn":
                action = agent.act(state_vec, step)
            else:
                action, logp, value = agent.act(state_vec)
            next_window, obs, done = env.step(Action(action))
            reward = tracker.step_reward(obs)
            next_vec = scaler.scale_window(next_window)
            if agent_kind == "dqn":
                agent.observe(state_vec, action, reward, next_vec, done, step)
            else:
                agent.store(state_vec, action, logp, value, reward, done)
                if agent.rollout_full:
                    _, bootstrap = agent.policy_value(next_vec)
                    agent.update(0.0 if done else bootstrap)
            episode_return += reward
            state_vec = next_vec
            step += 1
        curve.append(episode_return)
        if not agent.model.all_finite():
            raise TrainingDiverged(f"non-finite parameters at step {step}")
    return TrainResult(
        model=agent.model,
        kind=agent_kind,
        scaler=scaler,
        history_n=env.history_n,
        learning_curve=curve,
    )


class GreedyPolicy:
    """Deterministic policy from a trained model (argmax head output)."""

    def __init__(self, model: PolicyModel, kind: str, scaler: FeatureScaler) -> None:
        self.model = model
        self.kind = kind
        self.scaler = scaler

    def __call__(self, window: StateWindow) -> Action:
        out, _ = self.model.forward(self.scaler.scale_window(window))
        head = out[:5]
        return Action(int(np.argmax(head)))


class SamplingPolicy:
    """Draws from a stochastic policy head's action distribution."""

    def __init__(self, model: PolicyModel, scaler: FeatureScaler, seed: int = 0) -> None:
        self.model = model
        self.scaler = scaler
        self.rng = np.random.default_rng(seed)

    def __call__(self, window: StateWindow) -> Action:
        out, _ = self.model.forward(self.scaler.scale_window(window))
        logits = out[:5]
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        return Action(int(self.rng.choice(len(probs), p=probs)))


def policy_for(model: PolicyModel, kind: str, scaler: FeatureScaler, seed: int = 0):
    """Evaluation-time policy: value-based agents act greedily on their
    action values; stochastic policy-gradient agents act by their own
    distribution (their policy IS stochastic; no exploration is added)."""
    if kind == "ppo":
        return SamplingPolicy(model, scaler, seed)
    return GreedyPolicy(model, kind, scaler)


class StaticPolicy:
    """Scripted policy that never changes its parameters."""

    def __init__(self, params: TransferParams | None = None) -> None:
        self.params = params

    def __call__(self, window: StateWindow) -> Action:
        return Action.HOLD


@dataclass
class EvalResult:
    mean_throughput: float
    std_throughput: float
    total_energy: float
    energy_per_bit: float
    mean_streams: float
    episode_returns: list[float]
    traces: list[EpisodeTrace]


def run_episode(env, policy: Callable[[StateWindow], Action], rcfg: RewardConfig) -> EpisodeTrace:
    """Roll one episode with a fixed policy and record everything."""
    window, obs0 = env.reset()
    tracker = _RewardTracker(rcfg)
    observations: list[MiObservation] = []
    if obs0 is not None:
        tracker.push(obs0)
        observations.append(obs0)
    windows = [window]
    actions: list[Action] = []
    rewards: list[float] = []
    done = False
    while not done:
        action = policy(window)
        window, obs, done = env.step(action)
        rewards.append(tracker.step_reward(obs))
        observations.append(obs)
        windows.append(window)
        actions.append(action)
    throughputs = [o.throughput for o in observations]
    return EpisodeTrace(
        windows=tuple(windows),
        actions=tuple(actions),
        rewards=tuple(rewards),
        observations=tuple(observations),
        episode_return=float(sum(rewards)),
        mean_throughput=float(np.mean(throughputs)),
        total_energy=float(sum(o.energy for o in observations)),
        mean_streams=float(np.mean([o.cc * o.p for o in observations])),
    )


def evaluate(env, policy: Callable[[StateWindow], Action], episodes: int, rcfg: RewardConfig) -> EvalResult:
    """Greedy rollouts; aggregates throughput, energy and returns."""
    traces = [run_episode(env, policy, rcfg) for _ in range(episodes)]
    all_obs = [o for t in traces for o in t.observations]
    total_bits = sum(o.throughput for o in all_obs)  # 1 s MIs: bits == bit/s * dt
    total_energy = sum(o.energy for o in all_obs)
    throughputs = [o.throughput for o in all_obs]
    return EvalResult(
        mean_throughput=float(np.mean(throughputs)),
        std_throughput=float(np.std(throughputs)),
        total_energy=float(total_energy),
        energy_per_bit=float(total_energy / total_bits) if total_bits > 0 else math.inf,
        mean_streams=float(np.mean([o.cc * o.p for o in all_obs])),
        episode_returns=[t.episode_return for t in traces],
        traces=traces,
    )


def sweep_static(
    link_cfg: LinkConfig,
    energy_cfg: EnergyConfig,
    bounds: Bounds,
    grid: Sequence[tuple[int, int]],
    mis_per_setting: int = 60,
    seed: int = 0,
) -> list[dict]:
    """Hold each (cc, p) fixed for a stretch of MIs and record the means.

    Every setting replays the same background-traffic trace (same seed), so
    rows are directly comparable.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    from .simnet import SyntheticEnv

    rows = []
    for cc, p in grid:
        params = TransferParams(cc, p)
        if not bounds.contains(params):
            raise ValueError(f"grid point ({cc},{p}) violates bounds")
        env = SyntheticEnv(
            link_cfg,
            energy_cfg,
            bounds,
            EnvConfig(horizon=mis_per_setting, initial_cc=cc, initial_p=p),
            seed=seed,
        )
        trace = run_episode(env, StaticPolicy(), RewardConfig())
        rows.append(
            {
                "cc": cc,
                "p": p,
                "mean_throughput_bps": trace.mean_throughput,
                "mean_energy_j": trace.total_energy / len(trace.observations),
            }
        )
    return rows


def jain_index(throughputs: Sequence[float]) -> float:
    """Evenness of a bandwidth allocation: (sum T)^2 / (n * sum T^2).

    Equals 1 exactly when all throughputs match, and 1/n when one flow holds
    everything. Scale-invariant.
    """
    t = list(throughputs)
    if not t:
        raise ValueError("need at least one throughput")
    if any(x < 0 for x in t):
        raise ValueError("throughputs must be >= 0")
    square_sum = sum(x * x for x in t)
    if square_sum == 0:
        raise ValueError("all-zero throughputs leave the index undefined")
    return sum(t) ** 2 / (len(t) * square_sum)


@dataclass(frozen=True)
class FlowSpec:
    """One flow in a shared-link experiment.

    ``policy`` maps the flow's own state window to an action. ``start_mi``
    delays the flow's entry; ``duration_mis`` ends it early (None runs to the
    end of the experiment). Static flows may pin their initial parameters.
    """

    policy: Callable[[StateWindow], Action]
    start_mi: int = 0
    duration_mis: int | None = None
    initial: TransferParams | None = None
    label: str = ""


@dataclass
class FairnessResult:
    rows: list[dict]
    jfi_series: list[tuple[int, float]]
    per_flow_throughput: dict[int, list[tuple[int, float]]]


class _FlowRuntime:
    def __init__(self, spec: FlowSpec, initial: TransferParams, history_n: int, rcfg: RewardConfig):
        self.spec = spec
        self.flow = FlowState(params=initial)
        self.history: list[MiObservation] = []
        self.min_rtt = math.inf
        self.tracker = _RewardTracker(rcfg)
        self.history_n = history_n

    def window(self) -> StateWindow:
        return featurize(self.history, self.min_rtt, self.history_n)

    def record(self, obs: MiObservation) -> float:
        self.history.append(obs)
        self.min_rtt = min(self.min_rtt, obs.mean_rtt)
        return self.tracker.step_reward(obs)


def fairness_experiment(
    flow_specs: Sequence[FlowSpec],
    link_cfg: LinkConfig,
    energy_cfg: EnergyConfig,
    bounds: Bounds,
    duration_mis: int,
    rcfg: RewardConfig | None = None,
    env_cfg: EnvConfig | None = None,
    seed: int = 0,
) -> FairnessResult:
    """Advance several flows in lockstep on one shared link.

    Each flow's policy sees only that flow's observations. The running
    fairness index covers the flows active at each MI.
    """
    if len(flow_specs) < 2:
        raise ValueError("need at least two flows")
    rcfg = rcfg or RewardConfig()
    env_cfg = env_cfg or EnvConfig()
    rng = np.random.default_rng(seed)
    ticks_per_hold = max(1, round(link_cfg.bg_hold / link_cfg.mi_duration))
    runtimes: dict[int, _FlowRuntime] = {}
    rows: list[dict] = []
    jfi_series: list[tuple[int, float]] = []
    per_flow: dict[int, list[tuple[int, float]]] = {i: [] for i in range(len(flow_specs))}
    bg = 0.0
    for mi in range(duration_mis):
        if mi % ticks_per_hold == 0:
            bg = bg_sample(rng, link_cfg)
        # Admit newly started flows, retire finished ones.
        for i, spec in enumerate(flow_specs):
            ends = None if spec.duration_mis is None else spec.start_mi + spec.duration_mis
            active = spec.start_mi <= mi and (ends is None or mi < ends)
            if active and i not in runtimes:
                initial = spec.initial or TransferParams(env_cfg.initial_cc, env_cfg.initial_p)
                if not bounds.contains(initial):
                    raise ValueError(f"flow {i} initial parameters violate bounds")
                runtimes[i] = _FlowRuntime(spec, initial, env_cfg.history_n, rcfg)
            elif not active and i in runtimes:
                del runtimes[i]
        if not runtimes:
            continue
        # Flows with history act; newly admitted flows hold their setting.
        for i, rt in runtimes.items():
            if rt.history:
                action = rt.spec.policy(rt.window())
                rt.flow = replace(rt.flow, params=apply_action(rt.flow.params, action, bounds))
        order = sorted(runtimes)
        result = link_tick(
            link_cfg,
            energy_cfg,
            [runtimes[i].flow for i in order],
            bg,
            timestamp=mi * link_cfg.mi_duration,
        )
        throughputs = []
        for i, flow, obs in zip(order, result.flows, result.observations):
            rt = runtimes[i]
            rt.flow = flow
            reward = rt.record(obs)
            throughputs.append(obs.throughput)
            per_flow[i].append((mi, obs.throughput))
            rows.append(
                {
                    "time": mi * link_cfg.mi_duration,
                    "flow_id": i,
                    "cc": obs.cc,
                    "p": obs.p,
                    "throughput_bps": obs.throughput,
                    "plr": obs.plr,
                    "rtt_s": obs.mean_rtt,
                    "energy_j": obs.energy,
                    "reward": reward,
                    "jfi": None,
                }
            )
        jfi = jain_index(throughputs) if any(t > 0 for t in throughputs) else 1.0
        jfi_series.append((mi, jfi))
        for row in rows[-len(order):]:
            row["jfi"] = jfi
    return FairnessResult(rows=rows, jfi_series=jfi_series, per_flow_throughput=per_flow)


def retreat_experiment(
    policy: Callable[[StateWindow], Action],
    link_cfg: LinkConfig,
    energy_cfg: EnergyConfig,
    bounds: Bounds,
    env_cfg: EnvConfig,
    quiet_bg: float,
    inject_bg: float,
    inject_at_mi: int,
    duration_mis: int,
    seed: int = 0,
    rcfg: RewardConfig | None = None,
) -> EpisodeTrace:
    """Run one flow under a scripted background step: quiet, then saturated."""
    from .simnet import SyntheticEnv

    env = SyntheticEnv(
        link_cfg,
        energy_cfg,
        bounds,
        replace(env_cfg, horizon=duration_mis),
        seed=seed,
        bg_schedule=[(0, quiet_bg), (inject_at_mi, inject_bg)],
    )
    return run_episode(env, policy, rcfg or RewardConfig())


def amortized_cost(cost: CostModel, steps_per_transfer: int, num_transfers: int) -> tuple[float, float]:
    """Total and per-transfer energy of operating a trained model.

    total = E_train + T * S * E_inf; per_transfer = total / T. Training cost
    washes out as the transfer count grows.
    """
    if steps_per_transfer < 1 or num_transfers < 1:
        raise ValueError("steps_per_transfer and num_transfers must be >= 1")
    total = cost.train_energy + num_transfers * steps_per_transfer * cost.inference_energy
    return total, total / num_transfers


METRICS_FIELDS = [
    "time",
    "flow_id",
    "cc",
    "p",
    "throughput_bps",
    "plr",
    "rtt_s",
    "energy_j",
    "reward",
    "jfi",
]


def write_metrics_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in METRICS_FIELDS})


def write_sweep_csv(path: str | Path, rows: Sequence[dict]) -> None:
    fields = ["cc", "p", "mean_throughput_bps", "mean_energy_j"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def trace_rows(trace: EpisodeTrace, flow_id: int = 0, mi_duration: float = 1.0) -> list[dict]:
    """Flatten an episode trace into the shared metrics-CSV schema."""
    rows = []
    pad = len(trace.observations) - len(trace.rewards)  # reset obs carry no reward
    for i, obs in enumerate(trace.observations):
        reward = 0.0 if i < pad else trace.rewards[i - pad]
        rows.append(
            {
                "time": i * mi_duration,
                "flow_id": flow_id,
                "cc": obs.cc,
                "p": obs.p,
                "throughput_bps": obs.throughput,
                "plr": obs.plr,
                "rtt_s": obs.mean_rtt,
                "energy_j": obs.energy,
                "reward": reward,
                "jfi": 1.0,
            }
        )
    return rows


def summary_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
