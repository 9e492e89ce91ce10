"""Small numpy networks with hand-written backpropagation.

:class:`Network` is a feedforward function ``features -> outputs``: an optional
3x3 convolution over the spatial part of the input, a ReLU MLP trunk and one
linear output layer whose columns callers partition into heads (policy logits
and value, or V / Q / policy estimate).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, NumericalFault

CHECKPOINT_VERSION = "reciprocity-lab-checkpoint/1"


@dataclasses.dataclass(frozen=True)
class ConvSpec:
    """Layout of the spatial prefix of the input vector and the conv layer applied to it."""

    in_channels: int
    height: int
    width: int
    out_channels: int = 6
    kernel: int = 3

    @property
    def in_size(self) -> int:
        return self.in_channels * self.height * self.width

    @property
    def out_positions(self) -> int:
        return (self.height - self.kernel + 1) * (self.width - self.kernel + 1)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Network:
    def __init__(self, input_size: int, output_size: int, hidden_sizes=(32, 32),
                 conv: ConvSpec | None = None, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = int(input_size)
        self.output_size = int(output_size)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.conv = conv
        self.params: dict[str, np.ndarray] = {}
        width = self.input_size
        if conv is not None:
            if conv.in_size > self.input_size:
                raise ValueError("conv layout larger than the input")
            fan_in = conv.in_channels * conv.kernel ** 2
            self.params["conv.w"] = _uniform(rng, fan_in, (fan_in, conv.out_channels))
            self.params["conv.b"] = np.zeros(conv.out_channels)
            width = conv.out_positions * conv.out_channels + (self.input_size - conv.in_size)
        for i, h in enumerate(self.hidden_sizes):
            self.params[f"fc{i}.w"] = _uniform(rng, width, (width, h))
            self.params[f"fc{i}.b"] = np.zeros(h)
            width = h
        self.params["out.w"] = _uniform(rng, width, (width, self.output_size))
        self.params["out.b"] = np.zeros(self.output_size)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.params.items()}

    def zero_(self) -> "Network":
        for v in self.params.values():
            v[...] = 0.0
        return self

    def copy(self) -> "Network":
        clone = object.__new__(Network)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ValueError(f"expected input of shape (N, {self.input_size}), got {x.shape}")
        p = self.params
        cache: dict = {"x": x, "pre": []}
        h = x
        if self.conv is not None:
            c = self.conv
            n = x.shape[0]
            spatial = x[:, :c.in_size].reshape(n, c.in_channels, c.height, c.width)
            windows = sliding_window_view(spatial, (c.kernel, c.kernel), axis=(2, 3))
            patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * c.out_positions, -1)
            z = patches @ p["conv.w"] + p["conv.b"]
            cache["patches"], cache["conv_z"] = patches, z
            h = np.concatenate([np.maximum(z, 0.0).reshape(n, -1), x[:, c.in_size:]], axis=1)
        cache["inputs"] = []
        for i in range(len(self.hidden_sizes)):
            cache["inputs"].append(h)
            z = h @ p[f"fc{i}.w"] + p[f"fc{i}.b"]
            cache["pre"].append(z)
            h = np.maximum(z, 0.0)
        cache["last"] = h
        out = h @ p["out.w"] + p["out.b"]
        if not np.all(np.isfinite(out)):
            raise NumericalFault("non-finite network output")
        return out, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: dict, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients of ``sum(dout * output)``."""
        p = self.params
        grads: dict[str, np.ndarray] = {}
        grads["out.w"] = cache["last"].T @ dout
        grads["out.b"] = dout.sum(axis=0)
        dh = dout @ p["out.w"].T
        for i in reversed(range(len(self.hidden_sizes))):
            dz = dh * (cache["pre"][i] > 0)
            grads[f"fc{i}.w"] = cache["inputs"][i].T @ dz
            grads[f"fc{i}.b"] = dz.sum(axis=0)
            if i > 0 or self.conv is not None:
                dh = dz @ p[f"fc{i}.w"].T
        if self.conv is not None:
            c = self.conv
            n = dout.shape[0]
            conv_width = c.out_positions * c.out_channels
            dz = dh[:, :conv_width].reshape(n * c.out_positions, c.out_channels) * (cache["conv_z"] > 0)
            grads["conv.w"] = cache["patches"].T @ dz
            grads["conv.b"] = dz.sum(axis=0)
        return grads


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalFault(f"non-finite gradient in {name}")


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class RMSProp:
    """Root-mean-square gradient scaling, ``p -= lr * g / (sqrt(ms) + eps)``."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float, decay: float = 0.99,
                 epsilon: float = 1e-5, max_grad_norm: float | None = None):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.max_grad_norm = max_grad_norm
        self.mean_square = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        check_finite(grads)
        norm = global_norm(grads)
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / norm
        for k, g in grads.items():
            g = g * scale
            ms = self.mean_square[k]
            ms *= self.decay
            ms += (1.0 - self.decay) * g * g
            params[k] -= self.learning_rate * g / (np.sqrt(ms) + self.epsilon)
        return norm


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> Path:
    """Write named tensors plus a JSON header (version tag, config hash, shapes) to ``.npz``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash(config),
        "config": config,
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "extra": extra or {},
    }
    arrays = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            flat = {k: data[k] for k in data.files if k != "__meta__"}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    tensors = {}
    for name, shape in meta["shapes"].items():
        if name not in flat or flat[name].size != int(np.prod(shape)):
            raise CheckpointError(f"tensor {name} missing or truncated")
        tensors[name] = flat[name].reshape(shape)
    return meta, tensors


def load_into(network: Network, path, expected_config: dict | None = None) -> dict:
    """Copy checkpoint tensors into ``network``; shapes and (optionally) config hash must match."""
    meta, tensors = read_checkpoint(path)
    if set(tensors) != set(network.params):
        raise CheckpointError(
            f"tensor names differ: checkpoint {sorted(tensors)} vs network {sorted(network.params)}"
        )
    for name, value in tensors.items():
        if value.shape != network.params[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {value.shape} vs network {network.params[name].shape}"
            )
    if expected_config is not None and meta["config_hash"] != config_hash(expected_config):
        raise CheckpointError("checkpoint was written for a different environment/network configuration")
    for name, value in tensors.items():
        network.params[name][...] = value
    return meta
