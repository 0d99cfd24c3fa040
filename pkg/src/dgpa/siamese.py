"""Twin-encoder anomaly classifier with a GP output layer.

Two traces pass through one shared four-block ResNet encoder.  The
embeddings are compared element-wise through a difference-of-squares
similarity, reduced by a 128-unit relu layer, and scored by the GP
head, whose scalar output is trained with a margin contrastive loss
(pairs of normals pulled to 0, normal-anomaly pairs pushed past the
margin).  Hidden weights are kept under a spectral-norm bound so
embedding distances track input distances; the head's Laplace precision
turns distance from the training pairs into predictive uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PulsePair
from .diffcore import (
    Parameter,
    RngStream,
    Tape,
    Tensor,
    absolute,
    adam_step,
    backward_pass,
    reduce_mean,
    relu,
    reshape,
    square,
)
from .errors import ContractViolation
from .gp_head import (
    GPHead,
    fit_precision,
    gp_features,
    gp_forward,
    predict_from_features,
    sigmoid,
)
from .layers import Dense, SpectralState, build_encoder, dense_forward, spectral_normalize

HEAD_DENSE_UNITS = 128


@dataclass
class ContrastiveParams:
    """Loss balance alpha in (0,1) and the dissimilar-pair margin."""

    alpha: float = 0.5
    margin: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ContractViolation(f"alpha must be in (0,1), got {self.alpha}")
        if self.margin <= 0:
            raise ContractViolation(f"margin must be positive, got {self.margin}")


@dataclass
class SiameseConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-2
    alpha: float = 0.5
    margin: float = 1.0
    rff_dim: int = 256
    length_scale: float = 1.0
    ridge: float = 1e-3
    spectral_bound: float = 0.95
    power_iterations: int = 4
    trace_len: int = 256


def similarity_score(x1, x2) -> float:
    """Absolute summed difference of squares |sum_i (x1_i^2 - x2_i^2)|.

    Note this is not a Euclidean distance: any permutation applied to
    both embeddings, or swapping the two, leaves it unchanged.
    """
    a = np.asarray(x1, dtype=np.float64).reshape(-1)
    b = np.asarray(x2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractViolation(f"embedding lengths differ: {a.shape} vs {b.shape}")
    return float(abs(np.sum(a * a - b * b)))


def contrastive_loss(y, y_pred, params: ContrastiveParams) -> Tensor:
    """alpha (1-y) y'^2 + (1-alpha) y max(margin - y', 0)^2, averaged over pairs."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    y_pred = y_pred if isinstance(y_pred, Tensor) else Tensor(np.atleast_1d(y_pred))
    if y.shape[0] != y_pred.data.reshape(-1).shape[0]:
        raise ContractViolation("labels and predictions differ in length")
    similar = square(y_pred) * (params.alpha * (1.0 - y))
    hinge = relu(Tensor(np.full_like(y, params.margin)) - y_pred)
    dissimilar = square(hinge) * ((1.0 - params.alpha) * y)
    return reduce_mean(similar + dissimilar)


class SiameseModel:
    """Shared encoder + similarity head; finalize by fitting the precision."""

    def __init__(self, config: SiameseConfig, rng: RngStream):
        self.config = config
        self.encoder = build_encoder("siamese", in_channels=1,
                                     input_length=config.trace_len, rng=rng)
        self.head_dense = Dense(self.encoder.output_dim, HEAD_DENSE_UNITS,
                                rng=rng, name="head_dense")
        self.gp = GPHead(HEAD_DENSE_UNITS, dim=config.rff_dim,
                         length_scale=config.length_scale, ridge=config.ridge,
                         rng=rng, name="gp")
        self.contrastive = ContrastiveParams(config.alpha, config.margin)
        self.spectral_states: dict[str, SpectralState] = {}
        for p in self.constrained_weights():
            mat_rows = p.shape[0]
            mat_cols = int(np.prod(p.shape[1:]))
            self.spectral_states[p.name] = SpectralState(
                mat_rows, mat_cols, bound=config.spectral_bound,
                iterations=config.power_iterations, rng=rng)
        self.loss_history: list[float] = []

    def parameters(self) -> list[Parameter]:
        return (self.encoder.parameters() + self.head_dense.parameters()
                + self.gp.parameters())

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def constrained_weights(self) -> list[Parameter]:
        return self.encoder.constrained_weights() + [self.head_dense.w]

    def apply_spectral_constraint(self) -> None:
        for p in self.constrained_weights():
            mat = p.value.data.reshape(p.shape[0], -1)
            p.value.data = spectral_normalize(mat, self.spectral_states[p.name]) \
                .reshape(p.shape)


def pair_forward(model: SiameseModel, trace_a, trace_b, mode: str,
                 rng: RngStream) -> tuple[Tensor, Tensor]:
    """Similarity logits and GP features for a batch of trace pairs.

    Both traces go through the identical encoder parameters; the
    element-wise |a_i^2 - b_i^2| vector feeds the 128-unit relu layer
    and then the GP head.  Swapping the traces cannot change the output.
    """
    a = np.atleast_2d(np.asarray(trace_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(trace_b, dtype=np.float64))
    if a.shape[1] != model.config.trace_len or b.shape[1] != model.config.trace_len:
        raise ContractViolation(
            f"traces must be length {model.config.trace_len}, got {a.shape} / {b.shape}")
    e1 = model.encoder.forward(Tensor(a[:, None, :]), mode, rng)
    e2 = model.encoder.forward(Tensor(b[:, None, :]), mode, rng)
    diff = absolute(square(e1) - square(e2))
    hidden = dense_forward(model.head_dense.w.value, model.head_dense.b.value, diff, "relu")
    logits, phi = gp_forward(model.gp, hidden, mode, with_features=True)
    return logits, phi


def train_siamese(pairs: list[PulsePair], config: SiameseConfig,
                  rng: RngStream) -> SiameseModel:
    """Mini-batch Adam on the contrastive loss with a spectral-norm
    projection after every step; the GP precision is fitted once over the
    training pairs after the final epoch."""
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    if len(pairs) == 0 or not (np.any(labels == 0) and np.any(labels == 1)):
        raise ContractViolation("training needs both pair labels (0 and 1)")
    a_all = np.stack([p.trace_a for p in pairs])
    b_all = np.stack([p.trace_b for p in pairs])

    model = SiameseModel(config, rng.split())
    shuffle_rng = rng.split()
    dropout_rng = rng.split()
    params = model.trainable_parameters()
    all_params = model.parameters()

    step = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(pairs), config.batch_size):
            batch = order[start:start + config.batch_size]
            if batch.size < 2:
                continue  # batchnorm needs at least two samples
            with Tape(all_params) as tape:
                logits, _ = pair_forward(model, a_all[batch], b_all[batch],
                                         "train", dropout_rng)
                loss = contrastive_loss(labels[batch], logits, model.contrastive)
            backward_pass(tape, loss)
            step += 1
            adam_step(params, lr=config.lr, step=step)
            model.apply_spectral_constraint()
            epoch_losses.append(loss.item())
        model.loss_history.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)

    _calibrate_statistics(model, a_all, b_all)

    feats, logits = [], []
    for start in range(0, len(pairs), 64):
        sl = slice(start, start + 64)
        lg, phi = pair_forward(model, a_all[sl], b_all[sl], "infer", dropout_rng)
        feats.append(phi.data)
        logits.append(lg.data)
    if feats:
        features = np.concatenate(feats)
        p = sigmoid(np.concatenate(logits))
        fit_precision(model.gp, features, p * (1.0 - p))
    else:
        fit_precision(model.gp, np.zeros((0, model.gp.dim)), np.zeros(0))
    return model


def _calibrate_statistics(model: SiameseModel, a_all: np.ndarray,
                          b_all: np.ndarray) -> None:
    """Replace batchnorm running statistics with exact full-set statistics
    at the final weights, so inference matches what training optimized."""
    quiet = RngStream(0)
    both = np.concatenate([a_all, b_all])[:, None, :]
    emb = model.encoder.forward(Tensor(both), "calibrate", quiet).data
    e1, e2 = emb[:a_all.shape[0]], emb[a_all.shape[0]:]
    diff = np.abs(e1 * e1 - e2 * e2)
    hidden = dense_forward(model.head_dense.w.value, model.head_dense.b.value,
                           Tensor(diff), "relu")
    gp_features(model.gp, hidden, "calibrate")


def predict_pairs(model: SiameseModel, trace_a, trace_b,
                  rng: RngStream | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(probability, uncertainty, logit) for each pair, inference mode.

    Probability is the mean-field chance that the pair is
    normal-anomalous; uncertainty is the GP predictive standard
    deviation of the similarity logit.
    """
    if not model.gp.fitted:
        raise ContractViolation("model not finalized; fit the GP precision first")
    rng = rng if rng is not None else RngStream(0)
    a = np.atleast_2d(np.asarray(trace_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(trace_b, dtype=np.float64))
    e1 = model.encoder.forward(Tensor(a[:, None, :]), "infer", rng)
    e2 = model.encoder.forward(Tensor(b[:, None, :]), "infer", rng)
    diff = absolute(square(e1) - square(e2))
    hidden = dense_forward(model.head_dense.w.value, model.head_dense.b.value, diff, "relu")
    phi = gp_features(model.gp, hidden, "infer").data
    prob, std = predict_from_features(model.gp, phi, "binary")
    logit = phi @ model.gp.beta.value.data
    return prob, std, logit


def predict_pair(model: SiameseModel, pair: PulsePair) -> tuple[float, float]:
    prob, std, _ = predict_pairs(model, pair.trace_a[None, :], pair.trace_b[None, :])
    return float(prob[0]), float(std[0])
