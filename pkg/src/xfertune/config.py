"""Single JSON configuration document with one section per subsystem.

Every run consumes one document; command-line flags override individual keys
so the persisted manifest plus the document replay a run exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .agents import TrainConfig
from .core import Bounds
from .rewards import RewardConfig, RewardKind
from .simnet import EnergyConfig, EnvConfig, LinkConfig

__all__ = ["EmulatorConfig", "Document", "load_document", "fingerprint"]


@dataclass(frozen=True)
class EmulatorConfig:
    # k must cover the distinct (parameter rung, action) scenarios of the
    # default bounds, or lookups blend neighboring settings' outcomes.
    k: int = 128
    max_iter: int = 100
    tol: float = 1e-6
    n_init: int = 10


_SECTIONS = {
    "bounds": Bounds,
    "link": LinkConfig,
    "energy": EnergyConfig,
    "reward": RewardConfig,
    "env": EnvConfig,
    "emulator": EmulatorConfig,
}


@dataclass
class Document:
    bounds: Bounds = field(default_factory=Bounds)
    link: LinkConfig = field(default_factory=LinkConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    emulator: EmulatorConfig = field(default_factory=EmulatorConfig)
    train: dict = field(default_factory=dict)

    def train_config(self, agent: str, **overrides) -> TrainConfig:
        base = dict(self.train.get(agent, {}))
        base.update({k: v for k, v in overrides.items() if v is not None})
        if "hidden_layers" in base:
            base["hidden_layers"] = tuple(base["hidden_layers"])
        if agent == "dqn":
            return TrainConfig.dqn_defaults(**base)
        if agent == "ppo":
            return TrainConfig.ppo_defaults(**base)
        raise ValueError(f"unknown agent: {agent!r}")

    def as_dict(self) -> dict:
        doc = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        doc["reward"]["kind"] = self.reward.kind.value
        doc["train"] = self.train
        return doc


def _build_section(name: str, cls, data: dict):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"config section {name!r}: unknown keys {sorted(unknown)}")
    if name == "reward" and "kind" in data:
        data = dict(data)
        data["kind"] = RewardKind(data["kind"])
    if name == "link" and "bg_levels" in data:
        data = dict(data)
        data["bg_levels"] = tuple(data["bg_levels"])
    return cls(**data)


def load_document(path: str | Path | None = None) -> Document:
    """Load a configuration document; a missing path yields all defaults."""
    if path is None:
        return Document()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("configuration document must be a JSON object")
    unknown = set(raw) - set(_SECTIONS) - {"train"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    doc = Document()
    for name, cls in _SECTIONS.items():
        if name in raw:
            setattr(doc, name, _build_section(name, cls, raw[name]))
    doc.train = raw.get("train", {})
    return doc


def fingerprint(payload: dict) -> str:
    """Stable hash of a JSON-serializable payload."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
