"""Evaluation harness: ROC/AUC, uncertainty-smeared ROC bands, the
OOD-vs-ID uncertainty ratio, an exact small-n GP posterior used as the
reference for the RFF head, and the JSON evaluation report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .diffcore import RngStream
from .errors import ContractViolation, FactorizationError

FPR_GRID_SIZE = 512
BAND_PERCENTILES = (5.0, 95.0)
DEFAULT_SMEAR_TRIALS = 250


@dataclass
class RocCurve:
    """Threshold sweep results.

    fpr/tpr have one more entry than thresholds: index 0 is the (0, 0)
    anchor (no positives predicted), and point i+1 classifies scores >=
    thresholds[i] as positive.  Both sequences are nondecreasing and end
    at (1, 1).
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(), "fpr": self.fpr.tolist(),
                "tpr": self.tpr.tolist(), "auc": self.auc}

    @classmethod
    def from_dict(cls, d: dict) -> "RocCurve":
        return cls(np.array(d["thresholds"]), np.array(d["fpr"]),
                   np.array(d["tpr"]), float(d["auc"]))


@dataclass
class SmearBand:
    """Pointwise TPR percentile band over smearing trials."""

    fpr_grid: np.ndarray
    tpr_low: np.ndarray
    tpr_high: np.ndarray
    trials: int

    def mean_width(self) -> float:
        return float(np.mean(self.tpr_high - self.tpr_low))

    def to_dict(self) -> dict:
        return {"fpr_grid": self.fpr_grid.tolist(), "tpr_low": self.tpr_low.tolist(),
                "tpr_high": self.tpr_high.tolist(), "trials": self.trials}

    @classmethod
    def from_dict(cls, d: dict) -> "SmearBand":
        return cls(np.array(d["fpr_grid"]), np.array(d["tpr_low"]),
                   np.array(d["tpr_high"]), int(d["trials"]))


def roc_curve(scores, labels) -> RocCurve:
    """ROC by descending-threshold sweep; tied scores collapse into one
    threshold step; AUC by the trapezoidal rule."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractViolation("scores and labels differ in length")
    positives = int(np.sum(labels == 1))
    negatives = int(np.sum(labels == 0))
    if positives == 0 or negatives == 0:
        raise ContractViolation("roc_curve needs both labels present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.float64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    last_of_group = np.r_[np.nonzero(np.diff(sorted_scores))[0], scores.size - 1]
    thresholds = sorted_scores[last_of_group]
    tpr = np.r_[0.0, tp[last_of_group] / positives]
    fpr = np.r_[0.0, fp[last_of_group] / negatives]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds, fpr, tpr, auc)


def tpr_on_grid(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """Linear TPR interpolation of the ROC step curve onto an FPR grid."""
    return np.interp(grid, curve.fpr, curve.tpr)


def roc_with_smearing(means, stds, labels, trials: int = DEFAULT_SMEAR_TRIALS,
                      rng: RngStream | None = None,
                      grid_size: int = FPR_GRID_SIZE) -> SmearBand:
    """Percentile TPR band from Gaussian-resampled scores.

    Each trial draws score_i ~ N(mean_i, std_i), computes a ROC, and
    interpolates TPR onto a fixed FPR grid; the band is the pointwise
    5th/95th percentile across trials.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    stds = np.asarray(stds, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if not (means.shape == stds.shape == labels.shape):
        raise ContractViolation("means, stds, labels must have equal lengths")
    if np.any(stds < 0):
        raise ContractViolation("smearing stds must be nonnegative")
    if trials < 1:
        raise ContractViolation(f"trials must be >= 1, got {trials}")
    rng = rng if rng is not None else RngStream(0)
    grid = np.linspace(0.0, 1.0, grid_size)
    draws = rng.normal((trials, means.size))
    curves = np.empty((trials, grid_size))
    for t in range(trials):
        trial_scores = means + stds * draws[t]
        curves[t] = tpr_on_grid(roc_curve(trial_scores, labels), grid)
    low, high = np.percentile(curves, BAND_PERCENTILES, axis=0)
    return SmearBand(grid, low, high, trials)


def uncertainty_ratio(stds, flags) -> float:
    """mean(std | flag) / mean(std | not flag)."""
    stds = np.asarray(stds, dtype=np.float64).reshape(-1)
    flags = np.asarray(flags, dtype=bool).reshape(-1)
    if stds.shape != flags.shape:
        raise ContractViolation("stds and flags differ in length")
    if not (np.any(flags) and np.any(~flags)):
        raise ContractViolation("uncertainty_ratio needs both flag values present")
    return float(stds[flags].mean() / stds[~flags].mean())


def rbf_kernel(a, b, length_scale: float = 1.0) -> np.ndarray:
    """exp(-(a_i - b_j)^2 / (2 l^2)) for 1-D inputs."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    return np.exp(-((a - b) ** 2) / (2.0 * length_scale ** 2))


def exact_gp_oracle(train_x, train_y, queries, length_scale: float = 1.0,
                    noise_var: float = 1e-2) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form 1-D GP posterior under a unit-signal RBF kernel.

    mean = k*^T (K + noise*I)^-1 y and var = 1 - k*^T (K + noise*I)^-1 k*,
    solved by Cholesky factorization; with no training points the prior
    (mean 0, variance 1) is returned.
    """
    train_x = np.asarray(train_x, dtype=np.float64).reshape(-1)
    train_y = np.asarray(train_y, dtype=np.float64).reshape(-1)
    queries = np.asarray(queries, dtype=np.float64).reshape(-1)
    if noise_var <= 0:
        raise ContractViolation(f"noise_var must be positive, got {noise_var}")
    if train_x.size > 200:
        raise ContractViolation(f"oracle limited to 200 training points, got {train_x.size}")
    if train_x.shape != train_y.shape:
        raise ContractViolation("train_x and train_y differ in length")
    if train_x.size == 0:
        return np.zeros_like(queries), np.ones_like(queries)
    gram = rbf_kernel(train_x, train_x, length_scale) + noise_var * np.eye(train_x.size)
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"kernel factorization failed ({exc}); increase noise_var") from exc
    cross = rbf_kernel(train_x, queries, length_scale)       # [n, q]
    means = cross.T @ scipy.linalg.cho_solve(factor, train_y)
    solved = scipy.linalg.cho_solve(factor, cross)
    variances = 1.0 - np.einsum("nq,nq->q", cross, solved)
    return means, np.clip(variances, 0.0, 1.0)


@dataclass
class EvalReport:
    """Serializable bundle of evaluation artifacts.

    Top-level JSON keys: roc, band, uncertainty, config, seed; optional
    pieces are omitted entirely when absent.
    """

    config: dict = field(default_factory=dict)
    seed: int = 0
    roc: RocCurve | None = None
    band: SmearBand | None = None
    uncertainty: dict | None = None

    def to_dict(self) -> dict:
        out: dict = {"config": self.config, "seed": self.seed}
        if self.roc is not None:
            out["roc"] = self.roc.to_dict()
        if self.band is not None:
            out["band"] = self.band.to_dict()
        if self.uncertainty is not None:
            out["uncertainty"] = self.uncertainty
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            config=d.get("config", {}),
            seed=int(d.get("seed", 0)),
            roc=RocCurve.from_dict(d["roc"]) if "roc" in d else None,
            band=SmearBand.from_dict(d["band"]) if "band" in d else None,
            uncertainty=d.get("uncertainty"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_report(config: dict, seed: int, roc: RocCurve | None = None,
                 band: SmearBand | None = None,
                 uncertainty: dict | None = None) -> EvalReport:
    return EvalReport(config=config, seed=seed, roc=roc, band=band,
                      uncertainty=uncertainty)
