"""Feed-forward dynamics models: one dense network per control action,
iterated as x_{k+1} = f_a(x_k) + v_k with additive Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    LINEAR = "linear"

    @classmethod
    def parse(cls, name: str) -> "Activation":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(
                f"unsupported activation {name!r}; expected one of "
                f"{[a.value for a in cls]}"
            ) from None

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        if self is Activation.SIGMOID:
            return _sigmoid(x)
        if self is Activation.TANH:
            return np.tanh(x)
        return x


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign so exp never overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class DenseLayer:
    """y = activation(weights @ x + bias)."""

    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray     # (n_out,)
    activation: Activation

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2:
            raise ValueError(f"layer weights must be a matrix, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} output rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class NeuralDynamics:
    """State dimension, ordered action names, and one layer stack per action.
    Every network maps R^dim -> R^dim."""

    dim: int
    actions: tuple[str, ...]
    networks: dict[str, tuple[DenseLayer, ...]]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("state dimension must be positive")
        if not self.actions:
            raise ValueError("at least one action required")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("duplicate action names")
        for a in self.actions:
            layers = self.networks.get(a)
            if not layers:
                raise ValueError(f"missing network for action {a!r}")
            if layers[0].n_in != self.dim:
                raise ValueError(
                    f"action {a!r} layer 0 expects {layers[0].n_in} inputs, state dimension is {self.dim}"
                )
            for k in range(1, len(layers)):
                if layers[k].n_in != layers[k - 1].n_out:
                    raise ValueError(
                        f"action {a!r} layer {k} expects {layers[k].n_in} inputs, "
                        f"layer {k - 1} emits {layers[k - 1].n_out}"
                    )
            if layers[-1].n_out != self.dim:
                raise ValueError(
                    f"action {a!r} final layer emits {layers[-1].n_out} outputs, state dimension is {self.dim}"
                )

    def layers(self, action: str) -> tuple[DenseLayer, ...]:
        if action not in self.networks:
            raise KeyError(f"unknown action {action!r}")
        return self.networks[action]


def evaluate(nd: NeuralDynamics, action: str, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass f_a(x). Accepts a single state (dim,) or a
    batch (m, dim); returns the matching shape."""
    layers = nd.layers(action)
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    y = np.atleast_2d(arr)
    if y.shape[1] != nd.dim:
        raise ValueError(f"state has dimension {y.shape[1]}, expected {nd.dim}")
    for layer in layers:
        y = layer.activation.apply(y @ layer.weights.T + layer.bias)
    return y[0] if single else y


def sample_step(
    nd: NeuralDynamics,
    action: str,
    x: np.ndarray,
    covariance: np.ndarray,
    rng: np.random.Generator | int,
) -> np.ndarray:
    """One noisy step f_a(x) + v, v ~ N(0, covariance). `rng` is a Generator
    or a seed; passing the same seed reproduces the sample exactly."""
    cov = np.asarray(covariance, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("noise covariance must be positive definite") from None
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    mean = evaluate(nd, action, x)
    noise = gen.standard_normal(mean.shape)
    return mean + noise @ chol.T


# -- JSON model files --------------------------------------------------------

def load_networks(path: str) -> NeuralDynamics:
    """Load a dynamics model from the JSON layout

        {"dim": n, "actions": [...],
         "networks": {action: [{"weights": [[...]], "bias": [...],
                                "activation": "relu"}, ...]}}
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON ({e})") from None
    for key in ("dim", "actions", "networks"):
        if key not in raw:
            raise ValueError(f"{path}: missing top-level key {key!r}")
    actions = tuple(str(a) for a in raw["actions"])
    networks = {}
    for a in actions:
        if a not in raw["networks"]:
            raise ValueError(f"{path}: no network for action {a!r}")
        layers = []
        for k, spec in enumerate(raw["networks"][a]):
            for key in ("weights", "bias", "activation"):
                if key not in spec:
                    raise ValueError(f"{path}: action {a!r} layer {k} missing {key!r}")
            layers.append(
                DenseLayer(
                    weights=np.asarray(spec["weights"], dtype=float),
                    bias=np.asarray(spec["bias"], dtype=float),
                    activation=Activation.parse(spec["activation"]),
                )
            )
        networks[a] = tuple(layers)
    return NeuralDynamics(dim=int(raw["dim"]), actions=actions, networks=networks)


def save_networks(nd: NeuralDynamics, path: str) -> None:
    doc = {
        "dim": nd.dim,
        "actions": list(nd.actions),
        "networks": {
            a: [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation.value,
                }
                for layer in nd.networks[a]
            ]
            for a in nd.actions
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
