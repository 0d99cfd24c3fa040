"""Model-level checkpoint assembly on top of the binary array format.

A checkpoint holds every parameter by name, batchnorm running
statistics, the GP head's precision/covariance and flags, plus `meta/*`
scalars describing the architecture so the model can be rebuilt without
outside context.
"""

from __future__ import annotations

import numpy as np

from .diffcore import RngStream, load_checkpoint, save_checkpoint
from .errors import CheckpointError
from .siamese import SiameseConfig, SiameseModel
from .surrogate import SurrogateConfig, SurrogateModel

KIND_SIAMESE = 0.0
KIND_SURROGATE = 1.0


def _scalar(x) -> np.ndarray:
    return np.array([float(x)])


def _batchnorm_buffers(model) -> dict[str, np.ndarray]:
    norms = list(model.encoder.batchnorms())
    if model.gp.norm is not None:
        norms.append(model.gp.norm)
    buffers = {}
    for n in norms:
        buffers[f"{n.name}/running_mean"] = n.running_mean
        buffers[f"{n.name}/running_var"] = n.running_var
    return buffers


def _restore_batchnorms(model, arrays: dict[str, np.ndarray]) -> None:
    norms = list(model.encoder.batchnorms())
    if model.gp.norm is not None:
        norms.append(model.gp.norm)
    for n in norms:
        n.running_mean = arrays[f"{n.name}/running_mean"].copy()
        n.running_var = arrays[f"{n.name}/running_var"].copy()


def _gp_arrays(model) -> dict[str, np.ndarray]:
    arrays = {
        "gp/precision": model.gp.precision,
        "gp/fitted": _scalar(1.0 if model.gp.fitted else 0.0),
        "gp/mean_offset": _scalar(model.gp.mean_offset),
    }
    if model.gp.covariance is not None:
        arrays["gp/covariance"] = model.gp.covariance
    return arrays


def _restore_gp(model, arrays: dict[str, np.ndarray]) -> None:
    model.gp.precision = arrays["gp/precision"].copy()
    model.gp.fitted = bool(arrays["gp/fitted"][0])
    model.gp.mean_offset = float(arrays["gp/mean_offset"][0])
    model.gp.covariance = arrays["gp/covariance"].copy() if "gp/covariance" in arrays \
        else None


def save_siamese(path, model: SiameseModel) -> None:
    cfg = model.config
    arrays = {p.name: p.value.data for p in model.parameters()}
    arrays.update(_batchnorm_buffers(model))
    arrays.update(_gp_arrays(model))
    arrays.update({
        "meta/kind": _scalar(KIND_SIAMESE),
        "meta/trace_len": _scalar(cfg.trace_len),
        "meta/rff_dim": _scalar(cfg.rff_dim),
        "meta/length_scale": _scalar(cfg.length_scale),
        "meta/ridge": _scalar(cfg.ridge),
        "meta/alpha": _scalar(cfg.alpha),
        "meta/margin": _scalar(cfg.margin),
        "meta/spectral_bound": _scalar(cfg.spectral_bound),
        "meta/power_iterations": _scalar(cfg.power_iterations),
    })
    save_checkpoint(path, arrays)


def load_siamese(path) -> SiameseModel:
    arrays = load_checkpoint(path)
    if checkpoint_kind(arrays) != "siamese":
        raise CheckpointError(f"{path} is not a siamese checkpoint")
    cfg = SiameseConfig(
        trace_len=int(arrays["meta/trace_len"][0]),
        rff_dim=int(arrays["meta/rff_dim"][0]),
        length_scale=float(arrays["meta/length_scale"][0]),
        ridge=float(arrays["meta/ridge"][0]),
        alpha=float(arrays["meta/alpha"][0]),
        margin=float(arrays["meta/margin"][0]),
        spectral_bound=float(arrays["meta/spectral_bound"][0]),
        power_iterations=int(arrays["meta/power_iterations"][0]),
    )
    model = SiameseModel(cfg, RngStream(0))
    _restore_parameters(model, arrays, path)
    _restore_batchnorms(model, arrays)
    _restore_gp(model, arrays)
    return model


def save_surrogate(path, model: SurrogateModel) -> None:
    cfg = model.config
    arrays = {p.name: p.value.data for p in model.parameters()}
    arrays.update(_batchnorm_buffers(model))
    arrays.update(_gp_arrays(model))
    arrays.update({
        "meta/kind": _scalar(KIND_SURROGATE),
        "meta/rff_dim": _scalar(cfg.rff_dim),
        "meta/length_scale": _scalar(cfg.length_scale),
        "meta/noise_var": _scalar(cfg.noise_var),
        "meta/lambda_bl": _scalar(cfg.lambda_bl),
        "meta/l1": _scalar(cfg.l1),
        "meta/l2": _scalar(cfg.l2),
        "meta/pairs_per_batch": _scalar(cfg.pairs_per_batch),
        "meta/output_channel": _scalar(cfg.output_channel),
        "meta/window_steps": _scalar(cfg.window_steps),
        "meta/n_channels": _scalar(cfg.n_channels),
        "norm/channel_mean": model.channel_mean,
        "norm/channel_std": model.channel_std,
    })
    save_checkpoint(path, arrays)


def load_surrogate(path) -> SurrogateModel:
    arrays = load_checkpoint(path)
    if checkpoint_kind(arrays) != "surrogate":
        raise CheckpointError(f"{path} is not a surrogate checkpoint")
    cfg = SurrogateConfig(
        rff_dim=int(arrays["meta/rff_dim"][0]),
        length_scale=float(arrays["meta/length_scale"][0]),
        noise_var=float(arrays["meta/noise_var"][0]),
        lambda_bl=float(arrays["meta/lambda_bl"][0]),
        l1=float(arrays["meta/l1"][0]),
        l2=float(arrays["meta/l2"][0]),
        pairs_per_batch=int(arrays["meta/pairs_per_batch"][0]),
        output_channel=int(arrays["meta/output_channel"][0]),
        window_steps=int(arrays["meta/window_steps"][0]),
        n_channels=int(arrays["meta/n_channels"][0]),
    )
    model = SurrogateModel(cfg, RngStream(0))
    _restore_parameters(model, arrays, path)
    _restore_batchnorms(model, arrays)
    _restore_gp(model, arrays)
    model.channel_mean = arrays["norm/channel_mean"].copy()
    model.channel_std = arrays["norm/channel_std"].copy()
    return model


def checkpoint_kind(arrays: dict[str, np.ndarray]) -> str:
    if "meta/kind" not in arrays:
        raise CheckpointError("checkpoint is missing meta/kind")
    kind = float(arrays["meta/kind"][0])
    if kind == KIND_SIAMESE:
        return "siamese"
    if kind == KIND_SURROGATE:
        return "surrogate"
    raise CheckpointError(f"unknown model kind code {kind}")


def _restore_parameters(model, arrays: dict[str, np.ndarray], path) -> None:
    for p in model.parameters():
        if p.name not in arrays:
            raise CheckpointError(f"{path} is missing parameter {p.name!r}")
        stored = arrays[p.name]
        if stored.shape != p.value.data.shape:
            raise CheckpointError(
                f"{path}: parameter {p.name!r} has shape {stored.shape}, "
                f"expected {p.value.data.shape}")
        p.value.data = stored.copy()
