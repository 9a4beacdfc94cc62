"""Lookup-based offline training environment.

Transitions recorded from real (or synthetic) runs are clustered by k-means
in the joint (normalized state feature, one-hot action) space; each centroid
stands for a recurring network scenario. Stepping the environment finds the
cluster nearest the current (feature, action) query and uniformly samples one
of its member transitions, so every returned observation exists verbatim in
the source dataset while repeated visits still see natural variability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    Action,
    FeatureScaler,
    MiObservation,
    N_ACTIONS,
    StateFeature,
    StateWindow,
    TransferParams,
    apply_action,
)
from .simnet import EnvConfig
from .translog import TransitionDataset

__all__ = [
    "KMeansResult",
    "ClusterModel",
    "EmuEnvState",
    "kmeans_fit",
    "fit_cluster_model",
    "nearest_cluster",
    "emu_reset",
    "emu_step",
    "EmulatorEnv",
    "save_cluster_model",
    "load_cluster_model",
    "transition_keys",
]


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    members: tuple[tuple[int, ...], ...]
    sse: float
    sse_history: tuple[float, ...]


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _sse(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed centroids with distance-squared weighted sampling."""
    n = len(points)
    centroids = [points[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centroids)[None, :, :]) ** 2).sum(axis=2),
            axis=1,
        )
        total = d2.sum()
        if total <= 0:
            centroids.append(points[rng.integers(n)])
            continue
        centroids.append(points[rng.choice(n, p=d2 / total)])
    return np.asarray(centroids, dtype=float)


def _repair_empty(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> None:
    """Give every empty cluster a member by stealing the farthest point.

    When all remaining distances are zero (duplicate-heavy data), steal any
    point from a cluster that can spare one. Mutates centroids and labels.
    """
    k = len(centroids)
    for cid in range(k):
        if np.any(labels == cid):
            continue
        dist = ((points - centroids[labels]) ** 2).sum(axis=1)
        counts = np.bincount(labels, minlength=k)
        dist[counts[labels] <= 1] = -1.0  # never empty another cluster
        idx = int(dist.argmax())
        centroids[cid] = points[idx]
        labels[idx] = cid


def _lloyd(
    points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    centroids = _kmeans_pp_init(points, k, rng)
    history: list[float] = []
    labels = _assign(points, centroids)
    _repair_empty(points, centroids, labels)
    for _ in range(max_iter):
        history.append(_sse(points, centroids, labels))
        new_centroids = np.stack(
            [points[labels == cid].mean(axis=0) for cid in range(k)]
        )
        movement = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        new_labels = _assign(points, centroids)
        _repair_empty(points, centroids, new_labels)
        converged = movement < tol or np.array_equal(new_labels, labels)
        labels = new_labels
        if converged:
            break
    # Leave centroids as the exact member means of the stored assignment.
    centroids = np.stack([points[labels == cid].mean(axis=0) for cid in range(k)])
    history.append(_sse(points, centroids, labels))
    return centroids, labels, history


def kmeans_fit(
    points: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_init: int = 10,
) -> KMeansResult:
    """Lloyd's algorithm with distance-weighted seeding and restarts.

    ``n_init`` independent runs keep the best SSE; on small instances this
    reliably lands on the globally optimal partition.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must form a 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(pts):
        raise ValueError(f"k={k} exceeds the number of points ({len(pts)})")
    rng = np.random.default_rng(seed)
    best: tuple[float, np.ndarray, np.ndarray, list[float]] | None = None
    for _ in range(max(1, n_init)):
        centroids, labels, history = _lloyd(pts, k, rng, max_iter, tol)
        sse = history[-1]
        if best is None or sse < best[0]:
            best = (sse, centroids, labels, history)
    sse, centroids, labels, history = best
    members = tuple(
        tuple(int(i) for i in np.flatnonzero(labels == cid)) for cid in range(k)
    )
    return KMeansResult(
        centroids=centroids, members=members, sse=sse, sse_history=tuple(history)
    )


@dataclass(frozen=True)
class ClusterModel:
    """Fitted k-means partition of a transition dataset.

    Centroids live in the 10-dimensional key space: the 5 normalized feature
    dimensions followed by the 5-way one-hot action encoding.
    """

    k: int
    centroids: np.ndarray
    members: tuple[tuple[int, ...], ...]
    dataset_ref: str
    feature_scaling: FeatureScaler

    def __post_init__(self) -> None:
        if any(len(m) == 0 for m in self.members):
            raise ValueError("fitted model must have no empty clusters")


# Weight of the cc/p dimensions inside the cluster key. Min/max
# normalization compresses adjacent parameter settings to ~1/15 apart,
# below what k-means will split when other dimensions carry more variance;
# distinct settings must land in distinct clusters for lookups to answer a
# (state, action) query with that scenario's own outcomes.
PARAM_KEY_WEIGHT = 4.0

_KEY_WEIGHTS = np.array([1.0, 1.0, 1.0, PARAM_KEY_WEIGHT, PARAM_KEY_WEIGHT])


def _key(feature_scaled: np.ndarray, action: Action) -> np.ndarray:
    onehot = np.zeros(N_ACTIONS)
    onehot[int(action)] = 1.0
    return np.concatenate([feature_scaled * _KEY_WEIGHTS, onehot])


def transition_keys(dataset: TransitionDataset) -> np.ndarray:
    """Key vectors for every transition: normalized state + one-hot action."""
    scaler = dataset.feature_scaling
    return np.stack(
        [_key(scaler.scale(r.state), r.action) for r in dataset.records]
    )


def fit_cluster_model(
    dataset: TransitionDataset,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_init: int = 10,
    dataset_ref: str = "",
) -> ClusterModel:
    result = kmeans_fit(transition_keys(dataset), k, seed, max_iter, tol, n_init)
    return ClusterModel(
        k=k,
        centroids=result.centroids,
        members=result.members,
        dataset_ref=dataset_ref,
        feature_scaling=dataset.feature_scaling,
    )


def nearest_cluster(model: ClusterModel, feature: StateFeature, action: Action) -> int:
    """Cluster whose centroid is closest to (feature, action); ties break low."""
    key = _key(model.feature_scaling.scale(feature), action)
    d2 = ((model.centroids - key) ** 2).sum(axis=1)
    return int(d2.argmin())


@dataclass
class EmuEnvState:
    """Per-episode state of the lookup environment."""

    window: StateWindow
    params: TransferParams
    session_min_rtt: float
    step_count: int
    horizon: int

    @property
    def done(self) -> bool:
        return self.step_count >= self.horizon


def emu_reset(
    dataset: TransitionDataset,
    rng: np.random.Generator,
    history_n: int = 5,
    horizon: int = 128,
) -> EmuEnvState:
    """Start an episode from a uniformly sampled recorded state."""
    if not dataset.records:
        raise ValueError("dataset is empty")
    record = dataset.records[int(rng.integers(len(dataset.records)))]
    window = StateWindow((record.state,) * history_n)
    return EmuEnvState(
        window=window,
        params=TransferParams(record.state.cc, record.state.p),
        session_min_rtt=record.next_obs.mean_rtt,
        step_count=0,
        horizon=horizon,
    )


def emu_step(
    model: ClusterModel,
    dataset: TransitionDataset,
    state: EmuEnvState,
    action: Action,
    rng: np.random.Generator,
) -> tuple[EmuEnvState, MiObservation]:
    """Answer an action by sampling a recorded transition from the nearest
    cluster; the returned observation exists verbatim in the dataset."""
    cid = nearest_cluster(model, state.window.latest, action)
    members = model.members[cid]
    record = dataset.records[members[int(rng.integers(len(members)))]]
    new_state = EmuEnvState(
        window=state.window.advanced(record.next_state),
        params=apply_action(state.params, action, dataset.bounds),
        session_min_rtt=min(state.session_min_rtt, record.next_obs.mean_rtt),
        step_count=state.step_count + 1,
        horizon=state.horizon,
    )
    return new_state, record.next_obs


class EmulatorEnv:
    """Episodic reset/step facade over the cluster-lookup dynamics."""

    def __init__(
        self,
        model: ClusterModel,
        dataset: TransitionDataset,
        env_cfg: EnvConfig | None = None,
        seed: int = 0,
    ) -> None:
        self.model = model
        self.dataset = dataset
        self.env_cfg = env_cfg or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.bounds = dataset.bounds
        self.feature_scaler = dataset.feature_scaling
        self._state: EmuEnvState | None = None

    @property
    def history_n(self) -> int:
        return self.env_cfg.history_n

    @property
    def horizon(self) -> int:
        return self.env_cfg.horizon

    @property
    def params(self) -> TransferParams:
        assert self._state is not None, "reset() before reading params"
        return self._state.params

    def reset(self) -> tuple[StateWindow, MiObservation | None]:
        self._state = emu_reset(
            self.dataset, self.rng, self.env_cfg.history_n, self.env_cfg.horizon
        )
        # Recorded transitions carry no measurement for the sampled initial
        # state itself; the first step's lookup provides the first one.
        return self._state.window, None

    def step(self, action: Action) -> tuple[StateWindow, MiObservation, bool]:
        assert self._state is not None, "reset() before step()"
        self._state, obs = emu_step(self.model, self.dataset, self._state, action, self.rng)
        return self._state.window, obs, self._state.done

    def window(self) -> StateWindow:
        assert self._state is not None
        return self._state.window


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    doc = {
        "k": model.k,
        "centroids": model.centroids.tolist(),
        "members": [list(m) for m in model.members],
        "dataset_ref": model.dataset_ref,
        "feature_scaling": {
            "lo": list(model.feature_scaling.lo),
            "hi": list(model.feature_scaling.hi),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def load_cluster_model(path: str | Path) -> ClusterModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ClusterModel(
        k=doc["k"],
        centroids=np.asarray(doc["centroids"], dtype=float),
        members=tuple(tuple(m) for m in doc["members"]),
        dataset_ref=doc["dataset_ref"],
        feature_scaling=FeatureScaler(
            lo=tuple(doc["feature_scaling"]["lo"]),
            hi=tuple(doc["feature_scaling"]["hi"]),
        ),
    )
