"""Reinforcement-learning lab for tuning data-transfer concurrency and
parallelism: a synthetic bottleneck-link environment, a cluster-lookup
emulator built from transfer logs, two reward objectives, value- and
policy-based agents with explicit gradients, and the experiment harness."""

from .core import (
    Action,
    Bounds,
    FeatureScaler,
    MiObservation,
    StateFeature,
    StateWindow,
    TransferParams,
    apply_action,
    featurize,
)
from .rewards import RewardConfig, RewardKind
from .simnet import EnergyConfig, EnvConfig, LinkConfig, SyntheticEnv

__version__ = "0.1.0"
