"""Learning machinery: replay buffer, epsilon-greedy value learning with a
target network, and clipped-surrogate policy optimization with generalized
advantage estimation. All gradients are explicit (see nets)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import N_ACTIONS
from .nets import Adam, PolicyModel, clip_global_norm

__all__ = [
    "TrainConfig",
    "ReplayBuffer",
    "epsilon_at",
    "dqn_select",
    "dqn_loss_and_grad",
    "dqn_update",
    "target_sync",
    "gae",
    "normalize_advantages",
    "ppo_loss_and_grad",
    "ppo_update",
    "DQNAgent",
    "PPOAgent",
    "TrainingDiverged",
]


class TrainingDiverged(RuntimeError):
    """A parameter went non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for either agent; unused fields are ignored."""

    learning_rate: float = 1e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    batch_size: int = 32
    rollout_steps: int = 2048
    epochs: int = 10
    target_update_interval: int = 1000
    train_frequency: int = 4
    exploration_fraction: float = 0.1
    final_epsilon: float = 0.02
    max_grad_norm: float = 10.0
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    normalize_advantage: bool = True
    buffer_size: int = 10_000
    hidden_layers: tuple[int, ...] = (128, 128)
    total_steps: int = 100_000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_range <= 0:
            raise ValueError("clip_range must be > 0")
        counts = (
            self.batch_size,
            self.rollout_steps,
            self.epochs,
            self.target_update_interval,
            self.train_frequency,
            self.buffer_size,
            self.total_steps,
        )
        if any(c < 1 for c in counts):
            raise ValueError("count-valued hyperparameters must be >= 1")

    @classmethod
    def dqn_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(
            learning_rate=1e-3,
            gamma=0.99,
            batch_size=32,
            buffer_size=10_000,
            train_frequency=4,
            target_update_interval=1000,
            exploration_fraction=0.1,
            final_epsilon=0.02,
            max_grad_norm=10.0,
            hidden_layers=(128, 128),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def ppo_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(
            learning_rate=3e-4,
            gamma=0.99,
            gae_lambda=0.95,
            clip_range=0.2,
            batch_size=64,
            rollout_steps=2048,
            epochs=10,
            value_coef=0.5,
            entropy_coef=0.0,
            max_grad_norm=0.5,
            normalize_advantage=True,
            hidden_layers=(128, 128),
        )
        base.update(overrides)
        return cls(**base)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with FIFO eviction."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store: list[tuple] = []
        self._next = 0

    def push(
        self, state: np.ndarray, action: int, reward: float, next_state: np.ndarray, done: bool
    ) -> None:
        item = (state, action, reward, next_state, done)
        if len(self._store) < self.capacity:
            self._store.append(item)
        else:
            self._store[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._store)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(len(self._store), size=batch_size)
        states, actions, rewards, next_states, dones = zip(*(self._store[i] for i in idx))
        return (
            np.stack(states),
            np.asarray(actions, dtype=int),
            np.asarray(rewards, dtype=float),
            np.stack(next_states),
            np.asarray(dones, dtype=float),
        )


def epsilon_at(
    step: int, total_steps: int, exploration_fraction: float, final_epsilon: float
) -> float:
    """Linear decay from 1.0 to final_epsilon over the exploration phase."""
    if step < 0:
        raise ValueError("step must be >= 0")
    horizon = exploration_fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return final_epsilon
    return 1.0 + (final_epsilon - 1.0) * (step / horizon)


def dqn_select(
    model: PolicyModel, state: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over action values; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(N_ACTIONS))
    q, _ = model.forward(state)
    return int(np.argmax(q))


def dqn_loss_and_grad(
    model: PolicyModel, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
):
    """Mean squared error between selected action values and fixed targets."""
    q, cache = model.forward(states)
    n = len(states)
    selected = q[np.arange(n), actions]
    err = selected - targets
    loss = float(np.mean(err**2))
    grad_out = np.zeros_like(q)
    grad_out[np.arange(n), actions] = 2.0 * err / n
    return loss, model.backward(cache, grad_out)


def dqn_update(
    model: PolicyModel,
    target_model: PolicyModel,
    optimizer: Adam,
    batch,
    gamma: float,
    max_grad_norm: float,
) -> float:
    """One gradient step toward r + gamma * max_a' Q_target(s', a')."""
    states, actions, rewards, next_states, dones = batch
    if len(states) == 0:
        raise ValueError("batch must be nonempty")
    q_next, _ = target_model.forward(next_states)
    targets = rewards + gamma * q_next.max(axis=1) * (1.0 - dones)
    loss, grads = dqn_loss_and_grad(model, states, actions, targets)
    grads, _ = clip_global_norm(grads, max_grad_norm)
    optimizer.step(grads)
    return loss


def target_sync(
    model: PolicyModel, target_model: PolicyModel, interval: int, step: int
) -> bool:
    """Hard-copy online parameters into the target every ``interval`` steps."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    if step % interval == 0:
        target_model.copy_from(model)
        return True
    return False


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
    bootstrap_value: float,
):
    """Generalized advantage estimation over one rollout.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t), accumulated
    backward with factor gamma * lam * (1 - done_t). ``bootstrap_value``
    estimates the state following the final transition.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not (len(r) == len(v) == len(d)):
        raise ValueError("rewards, values and dones must share a length")
    adv = np.zeros_like(r)
    last = 0.0
    for t in range(len(r) - 1, -1, -1):
        next_value = bootstrap_value if t == len(r) - 1 else v[t + 1]
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * next_value * nonterminal - v[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + v


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ppo_loss_and_grad(
    model: PolicyModel,
    states: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    clip_range: float,
    value_coef: float,
    entropy_coef: float,
):
    """Clipped-surrogate policy loss plus weighted value loss and entropy bonus.

    The model's first 5 outputs are action logits, the last is the value
    estimate. Returns (loss, grads, stats).
    """
    out, cache = model.forward(states)
    n = len(states)
    logits = out[:, :N_ACTIONS]
    values = out[:, N_ACTIONS]
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    lp = logp_all[np.arange(n), actions]
    ratio = np.exp(lp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * advantages
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    value_err = values - returns
    value_loss = float(np.mean(value_err**2))
    entropy = -(probs * logp_all).sum(axis=1)
    loss = policy_loss + value_coef * value_loss - entropy_coef * float(entropy.mean())

    # Ratio gradient flows only where the unclipped term is the active min.
    active = (unclipped <= clipped).astype(float)
    dlp = -(active * advantages * ratio) / n
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    grad_logits = dlp[:, None] * (onehot - probs)
    if entropy_coef != 0.0:
        grad_logits += entropy_coef / n * probs * (logp_all + entropy[:, None])
    grad_values = value_coef * 2.0 * value_err / n
    grad_out = np.concatenate([grad_logits, grad_values[:, None]], axis=1)
    stats = {
        "loss": loss,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": float(entropy.mean()),
    }
    return loss, model.backward(cache, grad_out), stats


@dataclass
class Rollout:
    states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap_value: float


def ppo_update(
    model: PolicyModel,
    optimizer: Adam,
    rollout: Rollout,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> dict:
    """Several epochs of shuffled minibatch steps over one rollout."""
    n = len(rollout.states)
    if n < cfg.batch_size:
        raise ValueError("rollout shorter than the batch size")
    advantages, returns = gae(
        rollout.rewards,
        rollout.values,
        rollout.dones,
        cfg.gamma,
        cfg.gae_lambda,
        rollout.bootstrap_value,
    )
    stats: dict = {}
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            adv = advantages[idx]
            if cfg.normalize_advantage:
                adv = normalize_advantages(adv)
            _, grads, stats = ppo_loss_and_grad(
                model,
                rollout.states[idx],
                rollout.actions[idx],
                rollout.logp[idx],
                adv,
                returns[idx],
                cfg.clip_range,
                cfg.value_coef,
                cfg.entropy_coef,
            )
            grads, _ = clip_global_norm(grads, cfg.max_grad_norm)
            optimizer.step(grads)
    if not model.all_finite():
        raise TrainingDiverged("non-finite parameter after policy update")
    return stats


class DQNAgent:
    """Value-learning agent: epsilon-greedy collection, replay, target net."""

    kind = "dqn"

    def __init__(self, cfg: TrainConfig, input_dim: int) -> None:
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        sizes = (input_dim, *cfg.hidden_layers, N_ACTIONS)
        self.model = PolicyModel(sizes, self.rng)
        self.target = self.model.clone()
        self.optimizer = Adam(self.model, cfg.learning_rate)
        self.buffer = ReplayBuffer(cfg.buffer_size)

    def act(self, state: np.ndarray, step: int) -> int:
        eps = epsilon_at(
            step, self.cfg.total_steps, self.cfg.exploration_fraction, self.cfg.final_epsilon
        )
        return dqn_select(self.model, state, eps, self.rng)

    def greedy(self, state: np.ndarray) -> int:
        return dqn_select(self.model, state, 0.0, self.rng)

    def observe(
        self,
        state: np.ndarray,
        action: int,
        reward: float,
        next_state: np.ndarray,
        done: bool,
        step: int,
    ) -> float | None:
        self.buffer.push(state, action, reward, next_state, done)
        loss = None
        if len(self.buffer) >= self.cfg.batch_size and step % self.cfg.train_frequency == 0:
            batch = self.buffer.sample(self.cfg.batch_size, self.rng)
            loss = dqn_update(
                self.model,
                self.target,
                self.optimizer,
                batch,
                self.cfg.gamma,
                self.cfg.max_grad_norm,
            )
            if not self.model.all_finite():
                raise TrainingDiverged("non-finite parameter after value update")
        target_sync(self.model, self.target, self.cfg.target_update_interval, step)
        return loss


class PPOAgent:
    """On-policy agent: sampled actions, rollout buffer, clipped updates."""

    kind = "ppo"

    def __init__(self, cfg: TrainConfig, input_dim: int) -> None:
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        sizes = (input_dim, *cfg.hidden_layers, N_ACTIONS + 1)
        self.model = PolicyModel(sizes, self.rng)
        self.optimizer = Adam(self.model, cfg.learning_rate)
        self._reset_rollout()

    def _reset_rollout(self) -> None:
        self._states: list[np.ndarray] = []
        self._actions: list[int] = []
        self._logp: list[float] = []
        self._values: list[float] = []
        self._rewards: list[float] = []
        self._dones: list[bool] = []

    def policy_value(self, state: np.ndarray) -> tuple[np.ndarray, float]:
        out, _ = self.model.forward(state)
        logits = out[:N_ACTIONS]
        value = float(out[N_ACTIONS])
        shifted = logits - logits.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        return logp, value

    def act(self, state: np.ndarray) -> tuple[int, float, float]:
        logp, value = self.policy_value(state)
        action = int(self.rng.choice(N_ACTIONS, p=np.exp(logp)))
        return action, float(logp[action]), value

    def greedy(self, state: np.ndarray) -> int:
        logp, _ = self.policy_value(state)
        return int(np.argmax(logp))

    def store(
        self,
        state: np.ndarray,
        action: int,
        logp: float,
        value: float,
        reward: float,
        done: bool,
    ) -> None:
        self._states.append(state)
        self._actions.append(action)
        self._logp.append(logp)
        self._values.append(value)
        self._rewards.append(reward)
        self._dones.append(done)

    @property
    def rollout_full(self) -> bool:
        return len(self._states) >= self.cfg.rollout_steps

    def update(self, bootstrap_value: float) -> dict:
        rollout = Rollout(
            states=np.stack(self._states),
            actions=np.asarray(self._actions, dtype=int),
            logp=np.asarray(self._logp, dtype=float),
            values=np.asarray(self._values, dtype=float),
            rewards=np.asarray(self._rewards, dtype=float),
            dones=np.asarray(self._dones, dtype=float),
            bootstrap_value=bootstrap_value,
        )
        stats = ppo_update(self.model, self.optimizer, rollout, self.cfg, self.rng)
        self._reset_rollout()
        return stats
