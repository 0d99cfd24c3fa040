"""Neural-network building blocks: 1-D conv, dense, batchnorm, pooling,
dropout, spectral weight normalization, ResNet blocks, and the two
encoder presets used by the classifier and the surrogate."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .diffcore import (
    FanInScaled,
    Parameter,
    RngStream,
    Tensor,
    conv1d,
    maxpool1d,
    relu,
    reshape,
    seeded_init,
    tanh,
)
from .diffcore.tensor import reduce_mean, square, sqrt
from .errors import ContractViolation

BN_EPS = 1e-5
BN_MOMENTUM = 0.99

# "calibrate" behaves like training for batch statistics but keeps the
# stochastic layers off; used to re-estimate running stats at final weights
_MODES = ("train", "infer", "calibrate")


def _check_mode(mode: str) -> None:
    if mode not in _MODES:
        raise ContractViolation(f"mode must be one of {_MODES}, got {mode!r}")


class Conv1D:
    """1-D convolution layer; weights [filters, in_channels, kernel]."""

    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int = 1,
                 padding: str = "same", *, rng: RngStream, name: str):
        self.stride = stride
        self.padding = padding
        self.w = Parameter(seeded_init((filters, in_channels, kernel), FanInScaled(), rng).data,
                           f"{name}/w")
        self.b = Parameter(np.zeros(filters), f"{name}/b")

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def conv1d_forward(layer: Conv1D, x: Tensor) -> Tensor:
    out = conv1d(x, layer.w.value, stride=layer.stride, padding=layer.padding)
    return out + reshape(layer.b.value, (1, -1, 1))


class Dense:
    """Affine layer; weights [in_features, out_features]."""

    def __init__(self, in_features: int, out_features: int, *, rng: RngStream, name: str):
        self.w = Parameter(seeded_init((in_features, out_features), FanInScaled(), rng).data,
                           f"{name}/w")
        self.b = Parameter(np.zeros(out_features), f"{name}/b")

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def dense_forward(weights: Tensor, bias: Tensor, x: Tensor, activation: str = "none") -> Tensor:
    if x.shape[-1] != weights.shape[0]:
        raise ContractViolation(
            f"dense input width {x.shape[-1]} != weight rows {weights.shape[0]}")
    out = (x @ weights) + bias
    if activation == "relu":
        return relu(out)
    if activation == "tanh":
        return tanh(out)
    if activation == "none":
        return out
    raise ContractViolation(f"unknown activation {activation!r}")


class BatchNorm1D:
    """Per-channel normalization with running statistics.

    Training normalizes by batch statistics and accumulates running
    mean/variance; inference uses the running statistics only.  With
    affine=False the scale/shift stay frozen at identity.
    """

    def __init__(self, channels: int, *, name: str, affine: bool = True,
                 eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.scale = Parameter(np.ones(channels), f"{name}/scale", trainable=affine)
        self.shift = Parameter(np.zeros(channels), f"{name}/shift", trainable=affine)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def parameters(self) -> list[Parameter]:
        return [self.scale, self.shift]


def batchnorm_forward(layer: BatchNorm1D, x: Tensor, mode: str) -> Tensor:
    _check_mode(mode)
    if x.data.ndim == 2:
        axes, stat_shape = (0,), (1, -1)
    elif x.data.ndim == 3:
        axes, stat_shape = (0, 2), (1, -1, 1)
    else:
        raise ContractViolation(f"batchnorm expects [B,C] or [B,C,L], got {x.shape}")
    scale = reshape(layer.scale.value, stat_shape)
    shift = reshape(layer.shift.value, stat_shape)
    if mode in ("train", "calibrate"):
        if x.data.shape[0] < 2:
            raise ContractViolation("batchnorm in train mode needs batch size >= 2")
        mean = reduce_mean(x, axis=axes, keepdims=True)
        centered = x - mean
        var = reduce_mean(square(centered), axis=axes, keepdims=True)
        normalized = centered / sqrt(var + layer.eps)
        m = 0.0 if mode == "calibrate" else layer.momentum
        layer.running_mean = m * layer.running_mean + (1 - m) * mean.data.reshape(-1)
        layer.running_var = m * layer.running_var + (1 - m) * var.data.reshape(-1)
    else:
        rm = layer.running_mean.reshape(stat_shape)
        rv = layer.running_var.reshape(stat_shape)
        normalized = (x - rm) / np.sqrt(rv + layer.eps)
    return normalized * scale + shift


def maxpool1d_forward(x: Tensor) -> Tensor:
    """Window-2 max pooling; a trailing odd element pools alone."""
    return maxpool1d(x)


def dropout_forward(x: Tensor, rate: float, mode: str, rng: RngStream) -> Tensor:
    """Inverted dropout: train mode zeroes with probability `rate` and
    scales survivors by 1/(1-rate); other modes are the identity."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must be in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= rate).astype(np.float64)
    return x * (keep / (1.0 - rate))


class SpectralState:
    """Warm-started power-iteration vectors for one constrained weight."""

    def __init__(self, rows: int, cols: int, *, bound: float = 0.95,
                 iterations: int = 1, rng: RngStream):
        if bound <= 0:
            raise ContractViolation(f"norm bound must be positive, got {bound}")
        u = rng.normal((rows,))
        v = rng.normal((cols,))
        self.u = u / np.linalg.norm(u)
        self.v = v / np.linalg.norm(v)
        self.bound = bound
        self.iterations = iterations


def spectral_normalize(weight: np.ndarray, state: SpectralState) -> np.ndarray:
    """Scale `weight` (2-D) by min(1, bound / sigma_hat).

    Runs the configured number of power iterations to refresh (u, v);
    sigma_hat = u^T W v is nonnegative by construction.  A zero matrix
    is returned unscaled.
    """
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim != 2:
        raise ContractViolation(f"spectral_normalize expects a matrix, got shape {w.shape}")
    u, v = state.u, state.v
    for _ in range(state.iterations):
        v_raw = w.T @ u
        nv = np.linalg.norm(v_raw)
        if nv == 0.0:
            return w
        v = v_raw / nv
        u_raw = w @ v
        nu = np.linalg.norm(u_raw)
        if nu == 0.0:
            return w
        u = u_raw / nu
    state.u, state.v = u, v
    sigma = float(u @ w @ v)
    if sigma <= state.bound:
        return w
    return w * (state.bound / sigma)


def spectral_sigma(weight: np.ndarray, iterations: int = 50) -> float:
    """Standalone power-iteration estimate of the largest singular value."""
    w = weight.reshape(weight.shape[0], -1)
    u = np.ones(w.shape[0]) / np.sqrt(w.shape[0])
    for _ in range(iterations):
        v_raw = w.T @ u
        nv = np.linalg.norm(v_raw)
        if nv == 0.0:
            return 0.0
        v = v_raw / nv
        u = w @ v
        u /= np.linalg.norm(u)
    return float(u @ w @ v)


class ResNetBlock:
    """conv -> batchnorm -> maxpool -> relu, plus a pooled 1x1-conv skip
    path, joined before dropout."""

    def __init__(self, in_channels: int, filters: int, *, kernel: int = 3, stride: int = 2,
                 dropout_rate: float = 0.05, rng: RngStream, name: str):
        self.conv = Conv1D(in_channels, filters, kernel, stride, "same",
                           rng=rng, name=f"{name}/conv")
        self.norm = BatchNorm1D(filters, name=f"{name}/norm")
        self.skip = Conv1D(in_channels, filters, 1, stride, "same",
                           rng=rng, name=f"{name}/skip")
        self.dropout_rate = dropout_rate

    def parameters(self) -> list[Parameter]:
        return self.conv.parameters() + self.norm.parameters() + self.skip.parameters()

    def constrained_weights(self) -> list[Parameter]:
        return [self.conv.w, self.skip.w]


def resnet_block_forward(block: ResNetBlock, x: Tensor, mode: str, rng: RngStream) -> Tensor:
    main = relu(maxpool1d(batchnorm_forward(block.norm, conv1d_forward(block.conv, x), mode)))
    skip = maxpool1d(conv1d_forward(block.skip, x))
    if main.shape != skip.shape:
        raise RuntimeError(
            f"skip path shape {skip.shape} does not match main path {main.shape}")
    return dropout_forward(main + skip, block.dropout_rate, mode, rng)


def _pooled_length(length: int) -> int:
    return (length + 1) // 2


def _conv_length(length: int, stride: int) -> int:
    return -(-length // stride)


class _ConvStage:
    """Surrogate trunk stage: conv(tanh) -> batchnorm -> maxpool -> dropout."""

    def __init__(self, in_channels: int, filters: int, kernel: int,
                 dropout_rate: float, *, rng: RngStream, name: str):
        self.conv = Conv1D(in_channels, filters, kernel, 1, "same", rng=rng, name=f"{name}/conv")
        self.norm = BatchNorm1D(filters, name=f"{name}/norm")
        self.dropout_rate = dropout_rate

    def parameters(self) -> list[Parameter]:
        return self.conv.parameters() + self.norm.parameters()

    def forward(self, x: Tensor, mode: str, rng: RngStream) -> Tensor:
        out = tanh(conv1d_forward(self.conv, x))
        out = maxpool1d(batchnorm_forward(self.norm, out, mode))
        return dropout_forward(out, self.dropout_rate, mode, rng)


SIAMESE_FILTERS = (16, 32, 64, 128)
SURROGATE_FILTERS = 256
SURROGATE_STAGES = 3
SURROGATE_DENSE = 256


class Encoder:
    """A validated stack of stages mapping [B, C, L] to a flat embedding."""

    def __init__(self, kind: str, in_channels: int, input_length: int, *, rng: RngStream,
                 filters: Sequence[int] | None = None):
        self.kind = kind
        self.in_channels = in_channels
        self.input_length = input_length
        self.blocks: list = []
        self.final_dense: Dense | None = None
        length = input_length
        if kind == "resnet":
            filters = tuple(filters if filters is not None else SIAMESE_FILTERS)
            if not filters:
                raise ContractViolation("encoder needs at least one stage")
            prev = in_channels
            for i, f in enumerate(filters):
                if length < 2:
                    raise ContractViolation(
                        f"input length {input_length} too short: stage {i} would receive "
                        f"{length} samples (needs >= 2); use a longer input or fewer stages")
                self.blocks.append(ResNetBlock(prev, f, rng=rng, name=f"block{i}"))
                length = _pooled_length(_conv_length(length, 2))
                prev = f
            self.output_dim = prev * length
        elif kind == "conv":
            prev = in_channels
            for i in range(SURROGATE_STAGES):
                if length < 2:
                    raise ContractViolation(
                        f"input length {input_length} too short: stage {i} would receive "
                        f"{length} samples (needs >= 2)")
                self.blocks.append(_ConvStage(prev, SURROGATE_FILTERS, 3, 0.10,
                                              rng=rng, name=f"stage{i}"))
                length = _pooled_length(length)
                prev = SURROGATE_FILTERS
            self.final_dense = Dense(prev * length, SURROGATE_DENSE, rng=rng, name="trunk_dense")
            self.output_dim = SURROGATE_DENSE
        else:
            raise ContractViolation(f"unknown encoder kind {kind!r}")
        self.final_length = length

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for b in self.blocks:
            params.extend(b.parameters())
        if self.final_dense is not None:
            params.extend(self.final_dense.parameters())
        return params

    def constrained_weights(self) -> list[Parameter]:
        weights: list[Parameter] = []
        for b in self.blocks:
            if isinstance(b, ResNetBlock):
                weights.extend(b.constrained_weights())
            else:
                weights.append(b.conv.w)
        if self.final_dense is not None:
            weights.append(self.final_dense.w)
        return weights

    def batchnorms(self) -> list[BatchNorm1D]:
        return [b.norm for b in self.blocks]

    def forward(self, x: Tensor, mode: str, rng: RngStream) -> Tensor:
        _check_mode(mode)
        if x.data.ndim != 3 or x.data.shape[1] != self.in_channels:
            raise ContractViolation(
                f"encoder expects [B, {self.in_channels}, L] input, got {x.shape}")
        out = x
        for b in self.blocks:
            if isinstance(b, ResNetBlock):
                out = resnet_block_forward(b, out, mode, rng)
            else:
                out = b.forward(out, mode, rng)
        out = reshape(out, (out.shape[0], -1))
        if self.final_dense is not None:
            out = dense_forward(self.final_dense.w.value, self.final_dense.b.value, out, "tanh")
        return out


def build_encoder(descriptor, *, in_channels: int, input_length: int,
                  rng: RngStream) -> Encoder:
    """Construct an encoder from a preset name or a custom filter list.

    Presets: "siamese" (four stride-2 ResNet blocks, filters 16/32/64/128)
    and "surrogate" (three 256-filter tanh conv stages, then a 256-unit
    tanh dense layer).  A sequence of filter counts builds a custom
    ResNet stack; an empty sequence is a construction error.
    """
    if descriptor == "siamese":
        return Encoder("resnet", in_channels, input_length, rng=rng)
    if descriptor == "surrogate":
        return Encoder("conv", in_channels, input_length, rng=rng)
    if isinstance(descriptor, (list, tuple)):
        if len(descriptor) == 0:
            raise ContractViolation("custom encoder descriptor is empty")
        return Encoder("resnet", in_channels, input_length, rng=rng, filters=descriptor)
    raise ContractViolation(f"unknown encoder descriptor {descriptor!r}")
