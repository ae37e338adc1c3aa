"""Local model: an MLP with ReLU hidden layers and log-softmax output.

Parameters live in one flat float64 vector so aggregation is plain
vector arithmetic.  Layout, per layer l with fan_in f and fan_out g:
W_l flattened row-major as (f, g), then the bias b_l of length g,
layers concatenated input-to-output.

Training is minibatch SGD on the mean negative log-likelihood; the
gradient is an exact backprop computation (verified against central
finite differences in the test suite).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .seeds import derive_rng
from .datasets import LabeledDataset

__all__ = [
    "Architecture",
    "Minibatch",
    "ModelParams",
    "NumericError",
    "init_model",
    "loss_and_grad",
    "local_update",
    "evaluate",
    "params_to_bytes",
    "params_from_bytes",
]


class NumericError(ArithmeticError):
    """Raised when training or inference produces non-finite values."""


@dataclass(frozen=True)
class Architecture:
    """Layer widths of the MLP, input first, classes last."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def param_count(self) -> int:
        return sum((f + 1) * g for f, g in zip(self.layer_sizes, self.layer_sizes[1:]))

    @property
    def arch_id(self) -> str:
        tag = "mlp:" + "-".join(str(s) for s in self.layer_sizes)
        return hashlib.md5(tag.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Minibatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.shape[0] == 0:
            raise ValueError("minibatch must be non-empty")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature/label sizes disagree")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector tagged with its architecture."""

    values: np.ndarray
    arch: Architecture

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size != self.arch.param_count:
            raise ValueError(
                f"expected {self.arch.param_count} parameters, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise NumericError("model parameters contain non-finite values")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)

    @property
    def arch_id(self) -> str:
        return self.arch.arch_id


def _layers(values: np.ndarray, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (W, b) pairs."""
    out = []
    offset = 0
    for f, g in zip(arch.layer_sizes, arch.layer_sizes[1:]):
        w = values[offset:offset + f * g].reshape(f, g)
        offset += f * g
        b = values[offset:offset + g]
        offset += g
        out.append((w, b))
    return out


def init_model(arch: Architecture, seed: int) -> ModelParams:
    """Scaled-uniform init: every layer's W and b ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    All nodes call this with the same (arch, seed), so the whole network
    starts from one shared weight vector.
    """
    rng = derive_rng(seed, "init")
    values = np.empty(arch.param_count, dtype=np.float64)
    offset = 0
    for f, g in zip(arch.layer_sizes, arch.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(f)
        n = f * g + g
        values[offset:offset + n] = rng.uniform(-bound, bound, size=n)
        offset += n
    return ModelParams(values, arch)


def _forward(values: np.ndarray, arch: Architecture, x: np.ndarray,
             ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Log-probabilities plus the post-ReLU hidden activations."""
    hiddens: list[np.ndarray] = []
    a = x
    layers = _layers(values, arch)
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is caught below
        for w, b in layers[:-1]:
            a = np.maximum(a @ w + b, 0.0)
            hiddens.append(a)
        w, b = layers[-1]
        logits = a @ w + b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activations in forward pass")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return log_probs, hiddens


def loss_and_grad(p: ModelParams, b: Minibatch) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its exact gradient, flat like the params."""
    x = b.features
    y = b.labels
    log_probs, hiddens = _forward(p.values, p.arch, x)
    loss = float(-log_probs[np.arange(b.size), y].mean())

    grad = np.zeros_like(p.values)
    layers = _layers(p.values, p.arch)
    grad_layers = _layers(grad, p.arch)

    # d(loss)/d(logits) = (softmax - onehot) / batch_size
    delta = np.exp(log_probs)
    delta[np.arange(b.size), y] -= 1.0
    delta /= b.size

    activations = [x] + hiddens
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        gw, gb = grad_layers[l]
        gw[...] = activations[l].T @ delta
        gb[...] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ w.T) * (hiddens[l - 1] > 0)
    return loss, grad


def local_update(p: ModelParams, features: np.ndarray, labels: np.ndarray,
                 lr: float, epochs: int, batch_size: int, seed: int) -> ModelParams:
    """Minibatch SGD for a number of full passes; the input is untouched.

    Batch order reshuffles every epoch from the given seed, so the node's
    trajectory depends only on (params, data, hyperparameters, seed).
    """
    if features.shape[0] == 0:
        raise ValueError("cannot train on an empty partition")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    rng = derive_rng(seed, "sgd")
    values = p.values.copy()
    n = features.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            take = order[start:start + batch_size]
            batch = Minibatch(features[take], labels[take])
            _, grad = loss_and_grad(ModelParams(values, p.arch), batch)
            values = values - lr * grad
            if not np.all(np.isfinite(values)):
                raise NumericError("non-finite parameters after SGD step")
    return ModelParams(values, p.arch)


def evaluate(p: ModelParams, test: LabeledDataset) -> tuple[float, float]:
    """(accuracy, mean NLL) on a dataset; argmax ties break to the lowest class."""
    if len(test) == 0:
        raise ValueError("test set must be non-empty")
    log_probs, _ = _forward(p.values, p.arch, test.features)
    predicted = log_probs.argmax(axis=1)
    accuracy = float((predicted == test.labels).mean())
    loss = float(-log_probs[np.arange(len(test)), test.labels].mean())
    return accuracy, loss


_CHECKPOINT_MAGIC = b"FSMP"


def params_to_bytes(p: ModelParams) -> bytes:
    """Checkpoint format: magic, arch-id header, layer sizes, float64 LE payload."""
    sizes = p.arch.layer_sizes
    header = struct.pack(f">4s16sI{len(sizes)}I", _CHECKPOINT_MAGIC,
                         p.arch_id.encode("ascii"), len(sizes), *sizes)
    return header + p.values.astype("<f8").tobytes()


def params_from_bytes(raw: bytes) -> ModelParams:
    magic, arch_id, n_sizes = struct.unpack(">4s16sI", raw[:24])
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    sizes = struct.unpack(f">{n_sizes}I", raw[24:24 + 4 * n_sizes])
    arch = Architecture(sizes)
    if arch.arch_id != arch_id.decode("ascii"):
        raise ValueError("checkpoint architecture hash mismatch")
    values = np.frombuffer(raw[24 + 4 * n_sizes:], dtype="<f8").astype(np.float64)
    return ModelParams(values, arch)
