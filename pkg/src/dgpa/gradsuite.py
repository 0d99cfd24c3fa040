"""Standard gradient-check battery: every layer primitive plus both
full training objectives, checked against central finite differences in
inference mode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PulsePair, WindowedSample
from .diffcore import Gaussian, RngStream, Tensor, finite_diff_check, reduce_sum, seeded_init
from .gp_head import GPHead, gp_forward
from .layers import (
    BatchNorm1D,
    Conv1D,
    Dense,
    ResNetBlock,
    batchnorm_forward,
    conv1d_forward,
    dense_forward,
    maxpool1d_forward,
    resnet_block_forward,
)
from .siamese import SiameseConfig, SiameseModel, contrastive_loss, pair_forward
from .surrogate import SurrogateConfig, SurrogateModel, bilipschitz_penalty, mape_loss

GRAD_TOL = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_error: float
    passed: bool


def _weighted_sum(out: Tensor, rng: RngStream) -> Tensor:
    """Reduce an arbitrary output to a scalar through a fixed random functional."""
    r = rng.normal(out.shape)
    return reduce_sum(out * r)


def _check(name, forward, params, probe, results, rng, step=1e-5):
    report = finite_diff_check(forward, params, probe, step=step, rng=rng.split())
    err = report.max_relative_error
    results.append(GradCheckResult(name, err, err < GRAD_TOL))


def run_gradient_suite(seed: int = 20240) -> list[GradCheckResult]:
    rng = RngStream(seed)
    results: list[GradCheckResult] = []

    # dense layer under each activation
    for act in ("none", "relu", "tanh"):
        layer = Dense(6, 4, rng=rng.split(), name=f"dense_{act}")
        probe = Tensor(rng.normal((3, 6)))
        r = rng.split()

        def fwd(x, layer=layer, act=act, r=r):
            return _weighted_sum(dense_forward(layer.w.value, layer.b.value, x, act),
                                 RngStream(r.seed))

        _check(f"dense_{act}", fwd, layer.parameters(), probe, results, rng)

    # conv variants
    for label, stride, padding in (("s1_same", 1, "same"), ("s2_same", 2, "same"),
                                   ("s1_valid", 1, "valid")):
        layer = Conv1D(2, 3, 3, stride, padding, rng=rng.split(), name=f"conv_{label}")
        probe = Tensor(rng.normal((2, 2, 12)))
        r = rng.split()

        def fwd(x, layer=layer, r=r):
            return _weighted_sum(conv1d_forward(layer, x), RngStream(r.seed))

        _check(f"conv1d_{label}", fwd, layer.parameters(), probe, results, rng)

    # conv -> batchnorm chain, inference statistics randomized
    conv = Conv1D(2, 3, 3, 2, "same", rng=rng.split(), name="chain_conv")
    bn = BatchNorm1D(3, name="chain_norm")
    bn.running_mean = rng.normal((3,), 0.5)
    bn.running_var = 1.0 + rng.uniform((3,), 0.0, 0.5)
    probe = Tensor(rng.normal((2, 2, 12)))
    r = rng.split()

    def fwd_chain(x):
        out = batchnorm_forward(bn, conv1d_forward(conv, x), "infer")
        return _weighted_sum(out, RngStream(r.seed))

    _check("conv_batchnorm_infer", fwd_chain, conv.parameters() + bn.parameters(),
           probe, results, rng)

    # conv -> maxpool (odd length exercises the trailing window)
    conv2 = Conv1D(1, 2, 3, 1, "same", rng=rng.split(), name="pool_conv")
    probe = Tensor(rng.normal((2, 1, 9)))
    r = rng.split()

    def fwd_pool(x):
        return _weighted_sum(maxpool1d_forward(conv1d_forward(conv2, x)), RngStream(r.seed))

    _check("conv_maxpool", fwd_pool, conv2.parameters(), probe, results, rng)

    # full ResNet block in inference mode
    block = ResNetBlock(1, 4, rng=rng.split(), name="gc_block")
    probe = Tensor(rng.normal((2, 1, 16)))
    r = rng.split()
    quiet = RngStream(0)

    def fwd_block(x):
        return _weighted_sum(resnet_block_forward(block, x, "infer", quiet),
                             RngStream(r.seed))

    _check("resnet_block_infer", fwd_block, block.parameters(), probe, results, rng)

    # dense trunk into the GP head (random features + output weights)
    trunk = Dense(5, 8, rng=rng.split(), name="gp_trunk")
    head = GPHead(8, dim=16, rng=rng.split(), name="gc_gp")
    head.beta.value.data = rng.normal((16,))
    probe = Tensor(rng.normal((3, 5)))
    r = rng.split()

    def fwd_gp(x):
        hidden = dense_forward(trunk.w.value, trunk.b.value, x, "relu")
        return _weighted_sum(gp_forward(head, hidden, "infer"), RngStream(r.seed))

    _check("dense_gp_head", fwd_gp, trunk.parameters() + [head.beta], probe, results, rng)

    # full classifier objective: contrastive loss through the pair forward
    sia_cfg = SiameseConfig(trace_len=128)  # 128 keeps all four pooling stages fed
    sia = SiameseModel(sia_cfg, rng.split())
    pair_a = rng.normal((2, sia_cfg.trace_len))
    pair_b = rng.normal((2, sia_cfg.trace_len))
    labels = np.array([0.0, 1.0])
    quiet2 = RngStream(0)

    def fwd_siamese(_):
        logits, _phi = pair_forward(sia, pair_a, pair_b, "infer", quiet2)
        return contrastive_loss(labels, logits, sia.contrastive)

    _check("siamese_objective", fwd_siamese, sia.trainable_parameters(),
           Tensor(np.zeros(1)), results, rng)

    # full surrogate objective: MAPE + bi-Lipschitz penalty
    sur_cfg = SurrogateConfig()
    sur = SurrogateModel(sur_cfg, rng.split())
    win_inputs = 1.0 + 0.1 * rng.normal((4, sur_cfg.n_channels, sur_cfg.window_steps))
    targets = 1.0 + 0.1 * rng.normal((4,))
    flat = sur.standardize(win_inputs).reshape(4, -1)
    pair_seed = rng.split().seed
    quiet3 = RngStream(0)

    def fwd_surrogate(_):
        hidden = sur.hidden(win_inputs, "infer", quiet3)
        pred = gp_forward(sur.gp, hidden, "infer")
        loss = mape_loss(pred, targets)
        penalty = bilipschitz_penalty(flat, hidden, sur.lipschitz, RngStream(pair_seed))
        return loss + penalty * sur.lipschitz.weight

    _check("surrogate_objective", fwd_surrogate, sur.trainable_parameters(),
           Tensor(np.zeros(1)), results, rng)

    return results


def make_probe_pair(rng: RngStream, trace_len: int = 256) -> PulsePair:
    """Convenience pair of random traces for ad-hoc checks."""
    return PulsePair(rng.normal((trace_len,)), rng.normal((trace_len,)), 0)


def make_probe_window(rng: RngStream) -> WindowedSample:
    inputs = 1.0 + 0.1 * rng.normal((5, 15))
    return WindowedSample(inputs, float(1.0 + 0.1 * rng.normal(())), 0.95, False)
