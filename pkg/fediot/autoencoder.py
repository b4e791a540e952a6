"""
Symmetric deep autoencoder trained with mini-batch SGD.

The model is the per-device "local model": an encoder ladder that compresses
the standardized feature vector, a mirrored decoder, hidden ReLU (or tanh)
activations and a linear output layer. Reconstruction MSE is both the training
loss and the anomaly score. Forward and backward passes are written directly
against numpy so the gradient is exact and checkable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from fediot.errors import ConfigurationError
from fediot.numeric import Matrix, RngStream, Vector, as_matrix, matmul

logger = logging.getLogger(__name__)

DEFAULT_ENCODER_RATIOS: Tuple[float, ...] = (0.75, 0.50, 0.33, 0.25)
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer layout of the autoencoder, derived from the input width."""
    input_dim: int
    encoder_ratios: Tuple[float, ...] = DEFAULT_ENCODER_RATIOS
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "encoder_ratios", tuple(float(r) for r in self.encoder_ratios))
        self.validate()

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.encoder_ratios:
            raise ConfigurationError("encoder_ratios must name at least one layer")
        for ratio in self.encoder_ratios:
            if not 0.0 < ratio <= 1.0:
                raise ConfigurationError(f"encoder ratio {ratio} is outside (0, 1]")
        for prev, nxt in zip(self.encoder_ratios, self.encoder_ratios[1:]):
            if nxt >= prev:
                raise ConfigurationError(
                    f"encoder_ratios must be strictly decreasing, got {list(self.encoder_ratios)}"
                )
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"hidden_activation must be one of {ACTIVATIONS}, got {self.hidden_activation!r}"
            )

    @property
    def encoder_widths(self) -> List[int]:
        # round half up, never below one unit
        return [max(1, int(ratio * self.input_dim + 0.5)) for ratio in self.encoder_ratios]

    @property
    def layer_widths(self) -> List[int]:
        """Widths from input through bottleneck back to output."""
        enc = self.encoder_widths
        return [self.input_dim, *enc, *reversed(enc[:-1]), self.input_dim]

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out, in) weight shape of every layer."""
        widths = self.layer_widths
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


@dataclass(frozen=True)
class ModelParams:
    """
    Weights (out x in) and biases (out) of every layer.

    The canonical flat order is layer-major with each layer's weights
    (row-major) followed by its bias; this vector is what clients send.
    """
    weights: Tuple[Matrix, ...]
    biases: Tuple[Vector, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigurationError("weights and biases must have one entry per layer")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ConfigurationError(f"Inconsistent layer shapes {w.shape} / {b.shape}")

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [w.shape for w in self.weights]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> Vector:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def unflatten(cls, shapes: Sequence[Tuple[int, int]], flat: Vector) -> ModelParams:
        """Rebuild params of the given layer shapes from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(o * i + o for o, i in shapes)
        if flat.ndim != 1 or flat.size != expected:
            raise ConfigurationError(f"Flat vector of size {flat.size} does not fit {expected} parameters")
        weights, biases, pos = [], [], 0
        for out_dim, in_dim in shapes:
            weights.append(flat[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim).copy())
            pos += out_dim * in_dim
            biases.append(flat[pos:pos + out_dim].copy())
            pos += out_dim
        return cls(tuple(weights), tuple(biases))

    def like(self, flat: Vector) -> ModelParams:
        """Params with this model's shapes filled from ``flat``."""
        return ModelParams.unflatten(self.shapes, flat)

    def zeros_like(self) -> ModelParams:
        return ModelParams(
            tuple(np.zeros_like(w) for w in self.weights),
            tuple(np.zeros_like(b) for b in self.biases),
        )

    def copy(self) -> ModelParams:
        return ModelParams(tuple(w.copy() for w in self.weights), tuple(b.copy() for b in self.biases))

    def same_shape(self, other: ModelParams) -> bool:
        return self.shapes == other.shapes

    def tensors(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray]) -> ModelParams:
        return cls(tuple(tensors[0::2]), tuple(tensors[1::2]))


@dataclass
class OptimizerState:
    """SGD-with-momentum buffers and hyperparameters."""
    buffers: ModelParams
    lr: float = 0.012
    momentum: float = 0.9
    weight_decay: float = 1e-5

    @classmethod
    def fresh(cls, params: ModelParams, lr: float = 0.012, momentum: float = 0.9,
              weight_decay: float = 1e-5) -> OptimizerState:
        return cls(params.zeros_like(), lr=lr, momentum=momentum, weight_decay=weight_decay)


@dataclass(frozen=True)
class LossTrace:
    """Per-epoch mean training MSE."""
    epoch_losses: Tuple[float, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.epoch_losses)

    @property
    def total(self) -> float:
        return float(sum(self.epoch_losses))

    @property
    def final(self) -> float | None:
        return self.epoch_losses[-1] if self.epoch_losses else None


def init_params(spec: ArchitectureSpec, stream: RngStream) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic given ``stream``."""
    rng = stream.generator()
    weights, biases = [], []
    for out_dim, in_dim in spec.layer_shapes:
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weights.append(rng.uniform(-limit, limit, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return ModelParams(tuple(weights), tuple(biases))


def _activate(z: Matrix, kind: str) -> Matrix:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: Matrix, a: Matrix, kind: str) -> Matrix:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _check_batch(params: ModelParams, batch: Matrix) -> Matrix:
    batch = as_matrix(batch)
    if not params.weights:
        raise ConfigurationError("Model has no layers")
    input_dim = params.weights[0].shape[1]
    if batch.shape[1] != input_dim:
        raise ConfigurationError(f"Batch has {batch.shape[1]} features, model expects {input_dim}")
    return batch


def _forward_cache(params: ModelParams, batch: Matrix, activation: str):
    """Run the network and keep pre-activations and activations per layer."""
    activations = [batch]
    pre_activations = []
    last = len(params.weights) - 1
    a = batch
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = matmul(a, w.T) + b
        pre_activations.append(z)
        a = z if i == last else _activate(z, activation)
        activations.append(a)
    return pre_activations, activations


def forward(params: ModelParams, batch: Matrix, activation: str = "relu") -> Matrix:
    """
    Reconstruct a batch of standardized samples.

    Args:
        params: Model parameters
        batch: Samples, one per row
        activation: Hidden activation (the output layer is always linear)

    Returns:
        Reconstruction with the same shape as ``batch``

    Raises:
        ConfigurationError: If the batch width does not match the model
    """
    batch = _check_batch(params, batch)
    _, activations = _forward_cache(params, batch, activation)
    return activations[-1]


def mse(recon: Matrix, batch: Matrix) -> Tuple[Vector, float]:
    """Per-sample mean squared residual and its average over samples."""
    recon = np.asarray(recon, dtype=np.float64)
    batch = np.asarray(batch, dtype=np.float64)
    if recon.shape != batch.shape:
        raise ConfigurationError(f"Shape mismatch: {recon.shape} vs {batch.shape}")
    if batch.ndim != 2 or batch.shape[1] == 0:
        raise ConfigurationError("mse needs a 2-D batch with at least one feature")
    per_sample = np.mean((recon - batch) ** 2, axis=1)
    mean = float(per_sample.mean()) if per_sample.size else 0.0
    return per_sample, mean


def reconstruction_errors(params: ModelParams, batch: Matrix, activation: str = "relu") -> Vector:
    """Per-sample reconstruction MSE, the anomaly score."""
    per_sample, _ = mse(forward(params, batch, activation), batch)
    return per_sample


def _loss_and_grad(params: ModelParams, batch: Matrix, activation: str) -> Tuple[float, ModelParams]:
    pre, acts = _forward_cache(params, batch, activation)
    n, d = batch.shape
    residual = acts[-1] - batch
    loss = float(np.mean(np.mean(residual ** 2, axis=1)))
    # d(loss)/d(output) for loss = sum(residual^2) / (n * d)
    delta = residual * (2.0 / (n * d))
    grad_w: List[Matrix] = [None] * len(params.weights)
    grad_b: List[Vector] = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = matmul(delta.T, acts[i])
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = matmul(delta, params.weights[i]) * _activation_grad(pre[i - 1], acts[i], activation)
    return loss, ModelParams(tuple(grad_w), tuple(grad_b))


def backward(params: ModelParams, batch: Matrix, activation: str = "relu") -> ModelParams:
    """
    Exact gradient of the batch-mean reconstruction MSE.

    Weight decay is not included; it is applied by ``sgd_step``.
    """
    batch = _check_batch(params, batch)
    _, grad = _loss_and_grad(params, batch, activation)
    return grad


def sgd_step(params: ModelParams, grad: ModelParams,
             opt_state: OptimizerState) -> Tuple[ModelParams, OptimizerState]:
    """
    One SGD-with-momentum update with L2 decay folded into the gradient.

    g' = grad + weight_decay * param; buf = momentum * buf + g'; param -= lr * buf

    Returns:
        Updated parameters and optimizer state (inputs are left untouched)
    """
    if not (params.same_shape(grad) and params.same_shape(opt_state.buffers)):
        raise ConfigurationError("Parameter, gradient and buffer shapes differ")
    new_params, new_bufs = [], []
    for p, g, buf in zip(params.tensors(), grad.tensors(), opt_state.buffers.tensors()):
        g_decayed = g + opt_state.weight_decay * p
        nb = opt_state.momentum * buf + g_decayed
        new_bufs.append(nb)
        new_params.append(p - opt_state.lr * nb)
    new_state = OptimizerState(
        ModelParams.from_tensors(new_bufs),
        lr=opt_state.lr,
        momentum=opt_state.momentum,
        weight_decay=opt_state.weight_decay,
    )
    return ModelParams.from_tensors(new_params), new_state


def train_epochs(params: ModelParams, data: Matrix, epochs: int, batch_size: int,
                 opt_state: OptimizerState, stream: RngStream,
                 activation: str = "relu") -> Tuple[ModelParams, LossTrace]:
    """
    Mini-batch training over shuffled rows.

    Each epoch shuffles the rows with the next permutation drawn from
    ``stream``, trains on every full batch and then on the trailing partial
    batch, and records the mean of the batch losses seen during that epoch.

    Args:
        params: Starting parameters
        data: Standardized training rows
        epochs: Number of passes over ``data``
        batch_size: Rows per mini-batch
        opt_state: Optimizer buffers and hyperparameters
        stream: Randomness for the per-epoch shuffles
        activation: Hidden activation

    Returns:
        Tuple of (trained params, per-epoch LossTrace)

    Raises:
        ConfigurationError: If ``data`` is empty or the counts are invalid
    """
    data = _check_batch(params, data)
    if data.shape[0] == 0:
        raise ConfigurationError("Cannot train on an empty data matrix")
    if epochs < 0 or batch_size < 1:
        raise ConfigurationError(f"Invalid epochs={epochs} / batch_size={batch_size}")

    rng = stream.generator()
    n = data.shape[0]
    losses: List[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, batch_size):
            batch = data[order[start:start + batch_size]]
            loss, grad = _loss_and_grad(params, batch, activation)
            params, opt_state = sgd_step(params, grad, opt_state)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        losses.append(epoch_loss)
        logger.debug(f"epoch {epoch + 1}/{epochs}: loss={epoch_loss:.6f}")
    return params, LossTrace(tuple(losses))
