"""Core domain types shared by every other module.

Holds the controllable transfer parameters (concurrency ``cc`` = simultaneous
file-transfer tasks, parallelism ``p`` = TCP streams per task), the five-way
coupled adjustment action, per monitoring-interval (MI) observations, and the
windowed feature state consumed by learning agents.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

__all__ = [
    "Action",
    "ACTION_DELTAS",
    "N_ACTIONS",
    "Bounds",
    "TransferParams",
    "MiObservation",
    "StateFeature",
    "StateWindow",
    "FeatureScaler",
    "apply_action",
    "featurize",
]


class Action(IntEnum):
    """Joint adjustment of (cc, p); both parameters always move together."""

    HOLD = 0
    INC1 = 1
    DEC1 = 2
    INC2 = 3
    DEC2 = 4

    @property
    def delta(self) -> int:
        return ACTION_DELTAS[self]


ACTION_DELTAS: dict[Action, int] = {
    Action.HOLD: 0,
    Action.INC1: +1,
    Action.DEC1: -1,
    Action.INC2: +2,
    Action.DEC2: -2,
}

N_ACTIONS = len(Action)


@dataclass(frozen=True)
class Bounds:
    """Admissible region for transfer parameters.

    ``n_streams_cap`` caps the total stream count cc*p so a single transfer
    cannot claim an unbounded number of flows.
    """

    cc_min: int = 1
    cc_max: int = 16
    p_min: int = 1
    p_max: int = 16
    n_streams_cap: int = 256

    def __post_init__(self) -> None:
        if self.cc_min < 1 or self.p_min < 1:
            raise ValueError("cc_min and p_min must be >= 1")
        if self.cc_min > self.cc_max or self.p_min > self.p_max:
            raise ValueError("min bound exceeds max bound")
        if self.n_streams_cap < self.cc_min * self.p_min:
            raise ValueError("n_streams_cap below the smallest admissible cc*p")

    def contains(self, params: "TransferParams") -> bool:
        return (
            self.cc_min <= params.cc <= self.cc_max
            and self.p_min <= params.p <= self.p_max
            and params.cc * params.p <= self.n_streams_cap
        )


@dataclass(frozen=True)
class TransferParams:
    """The controllable pair: cc concurrent tasks, p streams per task."""

    cc: int
    p: int

    @property
    def n_streams(self) -> int:
        return self.cc * self.p


@dataclass(frozen=True)
class MiObservation:
    """Metrics sampled over one monitoring interval.

    Units are SI throughout: throughput in bits/s, mean_rtt in seconds,
    energy in joules. ``score`` records the instantaneous utility metric
    logged alongside the measurement.
    """

    timestamp: float
    throughput: float
    plr: float
    mean_rtt: float
    energy: float
    cc: int
    p: int
    score: float

    def __post_init__(self) -> None:
        if self.throughput < 0:
            raise ValueError("throughput must be >= 0")
        if not 0.0 <= self.plr <= 1.0:
            raise ValueError("plr must lie in [0, 1]")
        if self.mean_rtt <= 0:
            raise ValueError("mean_rtt must be > 0")
        if self.energy < 0:
            raise ValueError("energy must be >= 0")


@dataclass(frozen=True)
class StateFeature:
    """One MI's agent-visible signal vector.

    rtt_gradient is the relative RTT change versus the previous MI (unitless,
    so it transfers across networks); rtt_ratio compares the current mean RTT
    to the session minimum and is >= 1 whenever that minimum is current.
    """

    plr: float
    rtt_gradient: float
    rtt_ratio: float
    cc: int
    p: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.plr, self.rtt_gradient, self.rtt_ratio, float(self.cc), float(self.p)]
        )


FEATURE_DIM = 5


@dataclass(frozen=True)
class StateWindow:
    """Exactly n stacked feature vectors, oldest first."""

    features: tuple[StateFeature, ...]

    def __post_init__(self) -> None:
        if not self.features:
            raise ValueError("state window cannot be empty")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def latest(self) -> StateFeature:
        return self.features[-1]

    def advanced(self, feature: StateFeature) -> "StateWindow":
        """New window with ``feature`` appended and the oldest entry dropped."""
        return StateWindow(self.features[1:] + (feature,))

    def as_matrix(self) -> np.ndarray:
        return np.stack([f.as_array() for f in self.features])


@dataclass(frozen=True)
class FeatureScaler:
    """Per-dimension affine map (x - lo) / (hi - lo) over the 5 feature dims.

    Used both for k-means distance keys and for agent network inputs so the
    dimensions are commensurate. Degenerate dimensions (hi == lo) map to 0.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != FEATURE_DIM or len(self.hi) != FEATURE_DIM:
            raise ValueError("scaler must cover all feature dimensions")

    def scale(self, feature: StateFeature) -> np.ndarray:
        lo = np.asarray(self.lo)
        span = np.asarray(self.hi) - lo
        span = np.where(span > 0, span, 1.0)
        return (feature.as_array() - lo) / span

    def scale_window(self, window: StateWindow) -> np.ndarray:
        lo = np.asarray(self.lo)
        span = np.asarray(self.hi) - lo
        span = np.where(span > 0, span, 1.0)
        return ((window.as_matrix() - lo) / span).ravel()

    @classmethod
    def from_bounds(cls, bounds: Bounds) -> "FeatureScaler":
        """Fixed ranges for synthetic-link training, where no dataset exists.

        plr and rtt ranges reflect the congestion regimes the link model can
        produce near its knee. cc/p use a 5-unit span so adjacent parameter
        rungs stay well separated as network inputs even when the admissible
        range is wide.
        """
        return cls(
            lo=(0.0, -0.5, 1.0, float(bounds.cc_min), float(bounds.p_min)),
            hi=(0.02, 0.5, 2.0, float(bounds.cc_min) + 5.0, float(bounds.p_min) + 5.0),
        )


def apply_action(params: TransferParams, action: Action, bounds: Bounds) -> TransferParams:
    """Apply a joint delta and clamp the result into the admissible region.

    Each axis clamps independently into its [min, max] range; if the clamped
    pair still violates the cc*p cap, both parameters step down together until
    it holds (the coupled retreat mirrors the coupled action deltas).
    """
    d = ACTION_DELTAS[action]
    cc = min(max(params.cc + d, bounds.cc_min), bounds.cc_max)
    p = min(max(params.p + d, bounds.p_min), bounds.p_max)
    while cc * p > bounds.n_streams_cap:
        cc = max(cc - 1, bounds.cc_min)
        p = max(p - 1, bounds.p_min)
    return TransferParams(cc, p)


def _feature_at(history: Sequence[MiObservation], i: int, session_min_rtt: float) -> StateFeature:
    obs = history[i]
    if i == 0:
        gradient = 0.0
    else:
        prev_rtt = history[i - 1].mean_rtt
        gradient = (obs.mean_rtt - prev_rtt) / prev_rtt
    return StateFeature(
        plr=obs.plr,
        rtt_gradient=gradient,
        rtt_ratio=obs.mean_rtt / session_min_rtt,
        cc=obs.cc,
        p=obs.p,
    )


def featurize(history: Sequence[MiObservation], session_min_rtt: float, n: int) -> StateWindow:
    """Build the windowed state from the last n observations.

    Histories shorter than n pad the oldest positions by repeating the
    earliest available feature, so the window has fixed length from the first
    MI of an episode onward.
    """
    if not history:
        raise ValueError("history must contain at least one observation")
    if session_min_rtt <= 0:
        raise ValueError("session_min_rtt must be > 0")
    if n < 1:
        raise ValueError("window length n must be >= 1")
    start = max(0, len(history) - n)
    feats = [_feature_at(history, i, session_min_rtt) for i in range(start, len(history))]
    if len(feats) < n:
        feats = [feats[0]] * (n - len(feats)) + feats
    return StateWindow(tuple(feats))
