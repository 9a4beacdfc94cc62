"""Parsing and serialization of per-MI transfer logs, plus assembly of
(state, action, next-state) transition records for offline training.

A log entry looks like::

    1707718539.468927 -- INFO: Throughput:8.32Gbps lossRate:0 parallelism:7
    concurrency:7 score:3.0 rtt:34.6ms energy:80.0J

The parser is whitespace-insensitive between fields, so entries may span
multiple lines; the serializer always emits the canonical single-line form
and round-trips it byte-exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import rewards
from .core import (
    ACTION_DELTAS,
    Action,
    Bounds,
    FeatureScaler,
    MiObservation,
    StateFeature,
    TransferParams,
    apply_action,
)

__all__ = [
    "LogParseError",
    "LogSequenceError",
    "TransitionRecord",
    "TransitionDataset",
    "parse_line",
    "serialize_line",
    "parse_log",
    "build_transitions",
    "merge_datasets",
    "save_dataset",
    "load_dataset",
]


class LogParseError(ValueError):
    """Malformed log entry; ``field`` names the offending field."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class LogSequenceError(ValueError):
    """Consecutive observations whose parameter jump is not a legal action."""


_NUM = r"[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"
_FIELDS = {
    "throughput": re.compile(rf"Throughput:({_NUM})Gbps"),
    "lossRate": re.compile(rf"lossRate:({_NUM})(?:\s|$)"),
    "parallelism": re.compile(r"parallelism:([0-9]+)(?:\s|$)"),
    "concurrency": re.compile(r"concurrency:([0-9]+)(?:\s|$)"),
    "score": re.compile(rf"score:({_NUM})(?:\s|$)"),
    "rtt": re.compile(rf"rtt:({_NUM})ms"),
    "energy": re.compile(rf"energy:({_NUM})J"),
}
_HEADER = re.compile(rf"^\s*({_NUM})\s+--\s+INFO:")


def parse_line(text: str) -> MiObservation:
    """Parse one log entry into an observation with SI units."""
    header = _HEADER.match(text)
    if header is None:
        raise LogParseError("timestamp", "entry must start with '<epoch> -- INFO:'")
    values: dict[str, str] = {}
    for name, pattern in _FIELDS.items():
        match = pattern.search(text)
        if match is None:
            raise LogParseError(name, "field missing or malformed")
        values[name] = match.group(1)
    try:
        return MiObservation(
            timestamp=float(header.group(1)),
            throughput=float(values["throughput"]) * 1e9,
            plr=float(values["lossRate"]),
            mean_rtt=float(values["rtt"]) / 1e3,
            energy=float(values["energy"]),
            cc=int(values["concurrency"]),
            p=int(values["parallelism"]),
            score=float(values["score"]),
        )
    except ValueError as exc:
        raise LogParseError("value", str(exc)) from exc


def _fmt(x: float) -> str:
    """Shortest decimal string that round-trips to the same float."""
    return repr(float(x))


def _fmt_loss(x: float) -> str:
    # Zero loss is logged as a bare integer, matching production logs.
    if x == int(x):
        return str(int(x))
    return _fmt(x)


def serialize_line(obs: MiObservation) -> str:
    """Emit the canonical single-line log form of an observation."""
    return (
        f"{obs.timestamp:.6f} -- INFO: "
        f"Throughput:{_fmt(obs.throughput / 1e9)}Gbps "
        f"lossRate:{_fmt_loss(obs.plr)} "
        f"parallelism:{obs.p} "
        f"concurrency:{obs.cc} "
        f"score:{_fmt(obs.score)} "
        f"rtt:{_fmt(obs.mean_rtt * 1e3)}ms "
        f"energy:{_fmt(obs.energy)}J"
    )


def parse_log(text: str) -> list[MiObservation]:
    """Parse a whole log: one entry per 'epoch -- INFO:' header.

    Entries may each occupy one line or spread fields over several lines.
    """
    starts = [m.start() for m in re.finditer(rf"(?m)^\s*{_NUM}\s+--\s+INFO:", text)]
    if not starts:
        return []
    chunks = [text[a:b] for a, b in zip(starts, starts[1:] + [len(text)])]
    return [parse_line(chunk) for chunk in chunks]


@dataclass(frozen=True)
class TransitionRecord:
    """One (state, action, next-state) tuple with the resulting metrics."""

    state: StateFeature
    action: Action
    next_state: StateFeature
    next_obs: MiObservation
    utility: float


@dataclass(frozen=True)
class TransitionDataset:
    records: tuple[TransitionRecord, ...]
    bounds: Bounds
    feature_scaling: FeatureScaler

    def __len__(self) -> int:
        return len(self.records)


def _infer_action(
    prev: MiObservation, curr: MiObservation, bounds: Bounds
) -> Action:
    """Recover the action taken between two consecutive observations.

    The raw coupled delta is preferred; when clamping makes the raw delta
    ambiguous or asymmetric, any action that replays to the observed next
    parameters is accepted.
    """
    d_cc = curr.cc - prev.cc
    d_p = curr.p - prev.p
    params = TransferParams(prev.cc, prev.p)
    target = TransferParams(curr.cc, curr.p)
    matches = [a for a in Action if apply_action(params, a, bounds) == target]
    if d_cc == d_p:
        for action, delta in ACTION_DELTAS.items():
            if delta == d_cc and action in matches:
                return action
    if matches:
        return matches[0]
    raise LogSequenceError(
        f"parameter jump ({prev.cc},{prev.p})->({curr.cc},{curr.p}) between "
        f"timestamps {prev.timestamp} and {curr.timestamp} is not a legal action"
    )


def build_transitions(
    observations: Sequence[MiObservation],
    bounds: Bounds | None = None,
    reward_cfg: rewards.RewardConfig | None = None,
) -> TransitionDataset:
    """Assemble transition records from one chronological session.

    The action between consecutive MIs is inferred from the parameter pair,
    features are computed with a running session RTT minimum, and the
    per-dimension feature min/max is recorded for normalization.
    """
    if len(observations) < 2:
        raise ValueError("need at least two observations to form a transition")
    bounds = bounds or Bounds()
    reward_cfg = reward_cfg or rewards.RewardConfig()

    features: list[StateFeature] = []
    min_rtt = observations[0].mean_rtt
    for i, obs in enumerate(observations):
        min_rtt = min(min_rtt, obs.mean_rtt)
        if i == 0:
            gradient = 0.0
        else:
            prev_rtt = observations[i - 1].mean_rtt
            gradient = (obs.mean_rtt - prev_rtt) / prev_rtt
        features.append(
            StateFeature(
                plr=obs.plr,
                rtt_gradient=gradient,
                rtt_ratio=obs.mean_rtt / min_rtt,
                cc=obs.cc,
                p=obs.p,
            )
        )

    records = []
    for t in range(len(observations) - 1):
        action = _infer_action(observations[t], observations[t + 1], bounds)
        u = rewards.utility(
            observations[t].throughput,
            observations[t].plr,
            observations[t].cc,
            observations[t].p,
            reward_cfg.k_const,
            reward_cfg.b_const,
        )
        records.append(
            TransitionRecord(
                state=features[t],
                action=action,
                next_state=features[t + 1],
                next_obs=observations[t + 1],
                utility=u,
            )
        )
    return TransitionDataset(
        records=tuple(records),
        bounds=bounds,
        feature_scaling=_scaling_for(records),
    )


def merge_datasets(datasets: Sequence[TransitionDataset]) -> TransitionDataset:
    """Concatenate datasets from multiple sessions; scaling is recomputed."""
    if not datasets:
        raise ValueError("need at least one dataset")
    bounds = datasets[0].bounds
    if any(d.bounds != bounds for d in datasets):
        raise ValueError("datasets disagree on bounds")
    records = tuple(r for d in datasets for r in d.records)
    return TransitionDataset(records, bounds, _scaling_for(records))


def _scaling_for(records: Sequence[TransitionRecord]) -> FeatureScaler:
    feats = [r.state for r in records] + [r.next_state for r in records]
    vectors = [f.as_array() for f in feats]
    lo = [min(v[i] for v in vectors) for i in range(5)]
    hi = [max(v[i] for v in vectors) for i in range(5)]
    return FeatureScaler(lo=tuple(lo), hi=tuple(hi))


def _obs_to_dict(obs: MiObservation) -> dict:
    return {
        "timestamp": obs.timestamp,
        "throughput": obs.throughput,
        "plr": obs.plr,
        "mean_rtt": obs.mean_rtt,
        "energy": obs.energy,
        "cc": obs.cc,
        "p": obs.p,
        "score": obs.score,
    }


def _feature_to_dict(f: StateFeature) -> dict:
    return {
        "plr": f.plr,
        "rtt_gradient": f.rtt_gradient,
        "rtt_ratio": f.rtt_ratio,
        "cc": f.cc,
        "p": f.p,
    }


def save_dataset(dataset: TransitionDataset, path: str | Path) -> None:
    doc = {
        "bounds": {
            "cc_min": dataset.bounds.cc_min,
            "cc_max": dataset.bounds.cc_max,
            "p_min": dataset.bounds.p_min,
            "p_max": dataset.bounds.p_max,
            "n_streams_cap": dataset.bounds.n_streams_cap,
        },
        "feature_scaling": {
            "lo": list(dataset.feature_scaling.lo),
            "hi": list(dataset.feature_scaling.hi),
        },
        "records": [
            {
                "state": _feature_to_dict(r.state),
                "action": int(r.action),
                "next_state": _feature_to_dict(r.next_state),
                "next_obs": _obs_to_dict(r.next_obs),
                "utility": r.utility,
            }
            for r in dataset.records
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def load_dataset(path: str | Path) -> TransitionDataset:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    records = tuple(
        TransitionRecord(
            state=StateFeature(**rec["state"]),
            action=Action(rec["action"]),
            next_state=StateFeature(**rec["next_state"]),
            next_obs=MiObservation(**rec["next_obs"]),
            utility=rec["utility"],
        )
        for rec in doc["records"]
    )
    return TransitionDataset(
        records=records,
        bounds=Bounds(**doc["bounds"]),
        feature_scaling=FeatureScaler(
            lo=tuple(doc["feature_scaling"]["lo"]),
            hi=tuple(doc["feature_scaling"]["hi"]),
        ),
    )
