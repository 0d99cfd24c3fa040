"""Uncertainty-aware next-step regression surrogate.

A three-stage tanh conv trunk plus a 256-unit tanh dense layer embeds a
5-channel, 15-step window; the GP head regresses the output channel's
next value.  Training minimizes mean absolute percentage error plus a
two-sided hinge penalty keeping hidden distances within [L1, L2] times
the (standardized) input distances, so the embedding stays distance
preserving and the head's variance is meaningful for unfamiliar inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import WindowedSample
from .diffcore import (
    RngStream,
    Tape,
    Tensor,
    absolute,
    adam_step,
    backward_pass,
    gather_rows,
    reduce_mean,
    reduce_sum,
    relu,
    sqrt,
    square,
)
from .errors import ContractViolation
from .gp_head import GPHead, fit_precision, gp_features, gp_forward, predict_from_features
from .layers import build_encoder

MAPE_EPS = 1e-6


@dataclass
class LipschitzParams:
    """Two-sided embedding-distance bounds and the penalty weight."""

    l1: float = 0.75
    l2: float = 1.25
    weight: float = 0.1
    pairs_per_batch: int = 64

    def __post_init__(self):
        if not 0 < self.l1 <= self.l2:
            raise ContractViolation(f"need 0 < l1 <= l2, got l1={self.l1}, l2={self.l2}")
        if self.weight < 0:
            raise ContractViolation(f"penalty weight must be >= 0, got {self.weight}")
        if self.pairs_per_batch < 1:
            raise ContractViolation("pairs_per_batch must be positive")


@dataclass
class SurrogateConfig:
    epochs: int = 80
    batch_size: int = 32
    lr: float = 3e-3
    rff_dim: int = 256
    length_scale: float = 1.0
    noise_var: float = 1e-2   # also the GP ridge for regression
    lambda_bl: float = 0.1
    l1: float = 0.75
    l2: float = 1.25
    pairs_per_batch: int = 64
    output_channel: int = 1
    window_steps: int = 15
    n_channels: int = 5


def mape_loss(predictions: Tensor, targets) -> Tensor:
    """Mean absolute percentage error, in percent; near-zero targets are
    clamped at MAPE_EPS instead of dividing by zero."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ContractViolation("mape_loss needs at least one sample")
    predictions = predictions if isinstance(predictions, Tensor) else Tensor(predictions)
    if predictions.data.reshape(-1).shape[0] != targets.shape[0]:
        raise ContractViolation("predictions and targets differ in length")
    inv = 1.0 / np.maximum(np.abs(targets), MAPE_EPS)
    return reduce_mean(absolute(predictions - targets) * inv) * 100.0


def mape(predictions, targets) -> float:
    """Numpy evaluation counterpart of mape_loss."""
    return mape_loss(Tensor(np.asarray(predictions)), targets).item()


def _sample_index_pairs(batch: int, cap: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    total = batch * (batch - 1) // 2
    if total <= cap:
        ii, jj = np.triu_indices(batch, k=1)
        return ii, jj
    ii = rng.integers(0, batch, (cap,))
    jj = rng.integers(0, batch - 1, (cap,))
    jj = np.where(jj >= ii, jj + 1, jj)  # shift so j != i
    return ii, jj


def bilipschitz_penalty(inputs: np.ndarray, hiddens: Tensor, params: LipschitzParams,
                        rng: RngStream) -> Tensor:
    """Squared-hinge penalty on pairs violating l1*dx <= dh <= l2*dx.

    `inputs` are treated as constants; gradients flow through the hidden
    embeddings only.  Zero exactly when every sampled pair satisfies the
    double inequality.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    inputs = inputs.reshape(inputs.shape[0], -1)
    if inputs.shape[0] < 2:
        raise ContractViolation("bilipschitz_penalty needs a batch of at least 2")
    hiddens = hiddens if isinstance(hiddens, Tensor) else Tensor(hiddens)
    if hiddens.data.shape[0] != inputs.shape[0]:
        raise ContractViolation("inputs and hiddens differ in batch size")
    ii, jj = _sample_index_pairs(inputs.shape[0], params.pairs_per_batch, rng)
    dx = np.linalg.norm(inputs[ii] - inputs[jj], axis=1)
    dh = sqrt(reduce_sum(square(gather_rows(hiddens, ii) - gather_rows(hiddens, jj)),
                         axis=1))
    lower = relu(Tensor(params.l1 * dx) - dh)
    upper = relu(dh - Tensor(params.l2 * dx))
    return reduce_mean(square(lower) + square(upper))


class SurrogateModel:
    """Conv trunk + GP regression head with input standardization."""

    def __init__(self, config: SurrogateConfig, rng: RngStream):
        self.config = config
        self.encoder = build_encoder("surrogate", in_channels=config.n_channels,
                                     input_length=config.window_steps, rng=rng)
        self.gp = GPHead(self.encoder.output_dim, dim=config.rff_dim,
                         length_scale=config.length_scale, ridge=config.noise_var,
                         rng=rng, name="gp")
        self.lipschitz = LipschitzParams(config.l1, config.l2, config.lambda_bl,
                                         config.pairs_per_batch)
        self.channel_mean = np.zeros(config.n_channels)
        self.channel_std = np.ones(config.n_channels)
        self.loss_history: list[float] = []

    def parameters(self):
        return self.encoder.parameters() + self.gp.parameters()

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def standardize(self, inputs: np.ndarray) -> np.ndarray:
        """Per-channel standardization with training-set statistics."""
        return (inputs - self.channel_mean[:, None]) / self.channel_std[:, None]

    def hidden(self, inputs: np.ndarray, mode: str, rng: RngStream) -> Tensor:
        """Trunk embedding of raw windows [B, C, S]."""
        x = self.standardize(np.asarray(inputs, dtype=np.float64))
        return self.encoder.forward(Tensor(x), mode, rng)


def train_surrogate(windows: list[WindowedSample], config: SurrogateConfig,
                    rng: RngStream) -> SurrogateModel:
    """Adam on MAPE + lambda * bilipschitz penalty over pre-filtered
    in-distribution windows; fits the GP precision (unit weights) after
    the last epoch."""
    if len(windows) == 0:
        raise ContractViolation("training needs a nonempty window set")
    inputs = np.stack([w.inputs for w in windows])       # [N, C, S]
    targets = np.array([w.target for w in windows])

    model = SurrogateModel(config, rng.split())
    model.channel_mean = inputs.mean(axis=(0, 2))
    model.channel_std = np.maximum(inputs.std(axis=(0, 2)), 1e-8)
    model.gp.mean_offset = float(targets.mean())  # head fits residuals around this
    shuffle_rng = rng.split()
    dropout_rng = rng.split()
    pair_rng = rng.split()
    params = model.trainable_parameters()
    all_params = model.parameters()
    flat_std = model.standardize(inputs).reshape(len(windows), -1)

    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(windows))
        epoch_losses = []
        for start in range(0, len(windows), config.batch_size):
            batch = order[start:start + config.batch_size]
            if batch.size < 2:
                continue
            with Tape(all_params) as tape:
                hidden = model.hidden(inputs[batch], "train", dropout_rng)
                pred = gp_forward(model.gp, hidden, "train")
                loss = mape_loss(pred, targets[batch])
                if model.lipschitz.weight > 0:
                    penalty = bilipschitz_penalty(flat_std[batch], hidden,
                                                  model.lipschitz, pair_rng)
                    loss = loss + penalty * model.lipschitz.weight
            backward_pass(tape, loss)
            step += 1
            adam_step(params, lr=config.lr, step=step)
            epoch_losses.append(loss.item())
        model.loss_history.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)

    # replace running statistics with exact full-set statistics at the
    # final weights, so inference matches what training optimized
    hidden = model.hidden(inputs, "calibrate", RngStream(0))
    gp_features(model.gp, hidden, "calibrate")

    feats = []
    for start in range(0, len(windows), 256):
        sl = slice(start, start + 256)
        hidden = model.hidden(inputs[sl], "infer", dropout_rng)
        feats.append(gp_features(model.gp, hidden, "infer").data)
    features = np.concatenate(feats) if feats else np.zeros((0, model.gp.dim))
    fit_precision(model.gp, features, np.ones(features.shape[0]))
    return model


def predict(model: SurrogateModel, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mean, std) for a batch of raw windows [B, C, S]."""
    if not model.gp.fitted:
        raise ContractViolation("model not finalized; fit the GP precision first")
    hidden = model.hidden(np.asarray(inputs, dtype=np.float64), "infer", RngStream(0))
    phi = gp_features(model.gp, hidden, "infer").data
    return predict_from_features(model.gp, phi, "regression")


def predict_next_step(model: SurrogateModel, window: WindowedSample) -> tuple[float, float]:
    mean, std = predict(model, window.inputs[None])
    return float(mean[0]), float(std[0])


def ramp_probe(model: SurrogateModel, base_window: WindowedSample, channel: int,
               increments) -> list[tuple[float, float, float]]:
    """Predictions as one input channel is shifted by growing increments.

    Returns (increment, mean, std) rows; increments must start at 0 and
    be nondecreasing.
    """
    increments = np.asarray(increments, dtype=np.float64)
    if increments.size == 0 or increments[0] != 0.0 or np.any(np.diff(increments) < 0):
        raise ContractViolation("increments must be nondecreasing and start at 0")
    if not 0 <= channel < model.config.n_channels:
        raise ContractViolation(f"channel must be in [0, {model.config.n_channels})")
    batch = np.repeat(base_window.inputs[None], len(increments), axis=0)
    batch[:, channel, :] += increments[:, None]
    means, stds = predict(model, batch)
    return [(float(i), float(m), float(s)) for i, m, s in zip(increments, means, stds)]
