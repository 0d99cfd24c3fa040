"""Gaussian-process output layer built from random Fourier features.

A frozen projection approximates an RBF kernel: phi(h) = sqrt(2/D) *
cos(W h + b) with W ~ N(0, 1/len_scale^2) and b ~ U[0, 2pi).  The
trainable part is a single weight vector beta; after training, a
Laplace-style precision sI + sum_i w_i phi_i phi_i^T is accumulated once
and inverted, giving the predictive variance phi^T Sigma phi that grows
with distance from the training features.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .diffcore import Parameter, RngStream, Tensor, cos, matmul, reshape
from .errors import ContractViolation, FactorizationError
from .layers import BatchNorm1D, batchnorm_forward

MEAN_FIELD_FACTOR = math.pi / 8.0
VARIANCE_FLOOR = -1e-10


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class RFFMap:
    """Frozen random-feature projection: weights [D, m], phases [D]."""

    def __init__(self, in_dim: int, dim: int, length_scale: float, *, rng: RngStream,
                 name: str = "gp"):
        if length_scale <= 0:
            raise ContractViolation(f"length scale must be positive, got {length_scale}")
        w = rng.normal((dim, in_dim), sigma=1.0 / length_scale)
        b = rng.uniform((dim,), 0.0, 2.0 * math.pi)
        self.w = Parameter(w, f"{name}/rff_w", trainable=False)
        self.b = Parameter(b, f"{name}/rff_b", trainable=False)
        self.dim = dim
        self.in_dim = in_dim
        self.length_scale = length_scale


def rff_features(rff: RFFMap, h: Tensor) -> Tensor:
    """phi(h) = sqrt(2/D) cos(h W^T + b), row-wise.

    Gradient flows into h only; the projection and phases are frozen.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    if h.data.ndim != 2 or h.data.shape[1] != rff.in_dim:
        raise ContractViolation(
            f"rff input must be [batch, {rff.in_dim}], got {h.shape}")
    projected = matmul(h, Tensor(rff.w.value.data.T)) + Tensor(rff.b.value.data)
    return cos(projected) * math.sqrt(2.0 / rff.dim)


class GPHead:
    """RFF feature map + linear output weights + Laplace precision.

    `normalize_input=True` (the model default) inserts a non-affine
    batchnorm ahead of the feature map, then scales by 1/sqrt(in_dim):
    two independent whitened samples then sit ~sqrt(2) apart regardless
    of width, which is what makes a unit length scale meaningful.
    Raw-feature use cases (e.g. 1-D kernel studies) disable it.
    """

    def __init__(self, in_dim: int, dim: int = 256, length_scale: float = 1.0,
                 ridge: float = 1e-3, *, normalize_input: bool = True,
                 rng: RngStream, name: str = "gp"):
        if ridge <= 0:
            raise ContractViolation(f"ridge must be positive, got {ridge}")
        self.rff = RFFMap(in_dim, dim, length_scale, rng=rng, name=name)
        self.beta = Parameter(np.zeros(dim), f"{name}/beta")
        self.norm = BatchNorm1D(in_dim, name=f"{name}/norm", affine=False) \
            if normalize_input else None
        self.ridge = ridge
        self.precision = ridge * np.eye(dim)
        self.covariance: np.ndarray | None = None
        self.fitted = False
        # constant prior mean; regression fits residuals around it so the
        # output weights stay small (zero keeps the plain beta^T phi form)
        self.mean_offset = 0.0

    @property
    def dim(self) -> int:
        return self.rff.dim

    def parameters(self) -> list[Parameter]:
        params = [self.beta, self.rff.w, self.rff.b]
        if self.norm is not None:
            params.extend(self.norm.parameters())
        return params


def gp_features(head: GPHead, h: Tensor, mode: str = "infer") -> Tensor:
    h = h if isinstance(h, Tensor) else Tensor(h)
    if head.norm is not None:
        h = batchnorm_forward(head.norm, h, mode) * (1.0 / math.sqrt(head.rff.in_dim))
    return rff_features(head.rff, h)


def gp_forward(head: GPHead, h: Tensor, mode: str = "infer",
               with_features: bool = False):
    """Mean output (prior mean +) beta^T phi(h) per row, differentiable."""
    phi = gp_features(head, h, mode)
    out = reshape(matmul(phi, reshape(head.beta.value, (head.dim, 1))), (-1,))
    if head.mean_offset != 0.0:
        out = out + head.mean_offset
    return (out, phi) if with_features else out


def fit_precision(head: GPHead, features: np.ndarray, weights: np.ndarray) -> GPHead:
    """Accumulate precision ridge*I + sum_i w_i phi_i phi_i^T and invert it.

    Regression uses unit weights; binary classification uses p(1-p).
    The inverse is computed once by Cholesky factorization; failure
    suggests a larger ridge.
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1, head.dim)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if features.shape[0] != weights.shape[0]:
        raise ContractViolation(
            f"{features.shape[0]} feature rows vs {weights.shape[0]} weights")
    if np.any(weights < 0):
        raise ContractViolation("precision weights must be nonnegative")
    precision = head.ridge * np.eye(head.dim)
    if features.shape[0] > 0:
        precision += (features * weights[:, None]).T @ features
    precision = 0.5 * (precision + precision.T)
    try:
        factor = scipy.linalg.cho_factor(precision, lower=True)
        covariance = scipy.linalg.cho_solve(factor, np.eye(head.dim))
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"precision factorization failed ({exc}); increase the ridge "
            f"(current {head.ridge})") from exc
    covariance = 0.5 * (covariance + covariance.T)
    residual = np.max(np.abs(covariance @ precision - np.eye(head.dim)))
    if residual > 1e-6:
        raise FactorizationError(
            f"precision inverse residual {residual:.2e} exceeds 1e-6; "
            f"increase the ridge (current {head.ridge})")
    head.precision = precision
    head.covariance = covariance
    head.fitted = True
    return head


def reset_precision(head: GPHead) -> GPHead:
    head.precision = head.ridge * np.eye(head.dim)
    head.covariance = None
    head.fitted = False
    return head


def predict_from_features(head: GPHead, phi: np.ndarray,
                          task: str) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, standard deviation) from precomputed features."""
    if not head.fitted:
        raise ContractViolation("prediction requires a fitted precision; call fit_precision")
    if task not in ("regression", "binary"):
        raise ContractViolation(f"task must be regression or binary, got {task!r}")
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, head.dim)
    mean = head.mean_offset + phi @ head.beta.value.data
    variance = np.einsum("bi,ij,bj->b", phi, head.covariance, phi)
    if np.any(variance < VARIANCE_FLOOR):
        raise FactorizationError(
            f"negative predictive variance {variance.min():.2e}; covariance is not PSD")
    variance = np.maximum(variance, 0.0)
    std = np.sqrt(variance)
    if task == "regression":
        return mean, std
    adjusted = mean / np.sqrt(1.0 + MEAN_FIELD_FACTOR * variance)
    return sigmoid(adjusted), std


def gp_predict(head: GPHead, h, task: str) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, standard deviation) per row of h.

    Regression returns the raw mean; binary returns the mean-field
    probability sigmoid(logit / sqrt(1 + (pi/8) v)).  Both report
    sqrt(v) with v = phi^T Sigma phi as the uncertainty.
    """
    if not head.fitted:
        raise ContractViolation("gp_predict requires a fitted precision; call fit_precision")
    return predict_from_features(head, gp_features(head, h, "infer").data, task)


def fit_output_weights(head: GPHead, features: np.ndarray, targets: np.ndarray) -> GPHead:
    """Closed-form ridge solve for beta: (ridge*I + Phi^T Phi) beta = Phi^T y.

    This is the exact optimum of the squared-error objective with the
    head's own ridge, used when the output weights should match the
    feature-space posterior mean exactly rather than an SGD iterate.
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1, head.dim)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1) - head.mean_offset
    lhs = head.ridge * np.eye(head.dim) + features.T @ features
    try:
        factor = scipy.linalg.cho_factor(0.5 * (lhs + lhs.T), lower=True)
        beta = scipy.linalg.cho_solve(factor, features.T @ targets)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"output-weight solve failed ({exc}); increase the ridge") from exc
    head.beta.value.data = beta
    return head
