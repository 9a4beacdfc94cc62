"""Small fully-connected networks with explicit forward and backward passes.

No autograd framework: gradients are assembled by hand and verified against
finite differences in the test suite. The same model class serves value
estimation (5 action values) and policy/value heads (5 logits + 1 value).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FeatureScaler

__all__ = [
    "PolicyModel",
    "ForwardCache",
    "Adam",
    "clip_global_norm",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class ForwardCache:
    """Activations retained from one forward pass for the matching backward."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    batch_shape: tuple[int, ...]


class PolicyModel:
    """Affine layers with rectifier activations between them.

    ``layer_sizes`` chains input through hidden layers to the output head,
    e.g. (25, 128, 128, 5). Weights start at scaled-uniform fan-in values.
    """

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator) -> None:
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Run the network; accepts a single vector or a batch of rows."""
        arr = np.asarray(x, dtype=float)
        batch_shape = arr.shape[:-1]
        h = arr.reshape(-1, arr.shape[-1])
        if h.shape[1] != self.input_dim:
            raise ValueError(
                f"input dimension {h.shape[1]} does not match layer 0 ({self.input_dim})"
            )
        inputs = []
        preacts = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            preacts.append(z)
            h = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
        out = h.reshape(*batch_shape, self.output_dim)
        return out, ForwardCache(inputs=inputs, preacts=preacts, batch_shape=batch_shape)

    def backward(
        self, cache: ForwardCache, grad_out: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Reverse-mode gradients of a scalar loss w.r.t. every parameter.

        ``grad_out`` is dLoss/dOutput with the same shape the forward pass
        returned. Returns one (dW, db) pair per layer, first layer first.
        """
        g = np.asarray(grad_out, dtype=float)
        if g.shape[:-1] != cache.batch_shape or g.shape[-1] != self.output_dim:
            raise ValueError("grad_out shape does not match the cached forward pass")
        if len(cache.inputs) != len(self.weights):
            raise ValueError("stale cache: layer count mismatch")
        g = g.reshape(-1, self.output_dim)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (cache.preacts[i] > 0)
            grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i].T
        return grads

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy_from(self, other: "PolicyModel") -> None:
        if other.layer_sizes != self.layer_sizes:
            raise ValueError("layer sizes differ")
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def clone(self) -> "PolicyModel":
        dup = object.__new__(PolicyModel)
        dup.layer_sizes = self.layer_sizes
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())


def clip_global_norm(
    grads: list[tuple[np.ndarray, np.ndarray]], max_norm: float
) -> tuple[list[tuple[np.ndarray, np.ndarray]], float]:
    """Scale all gradients together so their global L2 norm is <= max_norm."""
    total = np.sqrt(
        sum(float((g**2).sum()) for pair in grads for g in pair)
    )
    if total > max_norm > 0:
        scale = max_norm / total
        grads = [(dw * scale, db * scale) for dw, db in grads]
    return grads, total


class Adam:
    """Adaptive moment estimation over a model's parameter list."""

    def __init__(
        self,
        model: PolicyModel,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in model.parameters()]
        self.v = [np.zeros_like(p) for p in model.parameters()]

    def step(self, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        flat = [g for pair in grads for g in pair]
        params = self.model.parameters()
        if len(flat) != len(params):
            raise ValueError("gradient count does not match parameter count")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, flat, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def save_checkpoint(
    path: str | Path,
    model: PolicyModel,
    kind: str,
    scaler: FeatureScaler,
    history_n: int,
    seed: int,
    config_fingerprint: str = "",
) -> None:
    doc = {
        "kind": kind,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaler": {"lo": list(scaler.lo), "hi": list(scaler.hi)},
        "history_n": history_n,
        "seed": seed,
        "config_fingerprint": config_fingerprint,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyModel, str, FeatureScaler, int]:
    """Load a checkpoint; shapes are validated against the declared sizes."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    sizes = tuple(doc["layer_sizes"])
    model = object.__new__(PolicyModel)
    model.layer_sizes = sizes
    model.weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    model.biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    expected = list(zip(sizes, sizes[1:]))
    got_w = [w.shape for w in model.weights]
    got_b = [b.shape for b in model.biases]
    if got_w != [(i, o) for i, o in expected] or got_b != [(o,) for _, o in expected]:
        raise ValueError("checkpoint weight shapes do not chain with layer_sizes")
    scaler = FeatureScaler(
        lo=tuple(doc["scaler"]["lo"]), hi=tuple(doc["scaler"]["hi"])
    )
    return model, doc["kind"], scaler, int(doc["history_n"])
