"""GP output layer: random-feature kernel approximation, precision
accumulation, posterior prediction, and the exact-GP reference behavior."""

import numpy as np
import pytest

from dgpa.diffcore import Parameter, RngStream, Tape, Tensor, adam_step, backward_pass, reduce_sum
from dgpa.errors import ContractViolation
from dgpa.evalkit import rbf_kernel
from dgpa.gp_head import (
    GPHead,
    RFFMap,
    fit_output_weights,
    fit_precision,
    gp_features,
    gp_forward,
    gp_predict,
    reset_precision,
    rff_features,
    sigmoid,
)


def _kernel_mae(dim: int, seed: int, pairs=100, width=8) -> float:
    rng = RngStream(77)
    x = rng.uniform((pairs, width), -1.0, 1.0)
    y = rng.uniform((pairs, width), -1.0, 1.0)
    exact = np.exp(-np.sum((x - y) ** 2, axis=1) / 2.0)
    rff = RFFMap(width, dim, 1.0, rng=RngStream(seed))
    fx = rff_features(rff, Tensor(x)).data
    fy = rff_features(rff, Tensor(y)).data
    return float(np.mean(np.abs(np.sum(fx * fy, axis=1) - exact)))


class TestRffFeatures:
    def test_kernel_mae_small_at_large_dim(self):
        assert _kernel_mae(4096, seed=100) < 0.05

    def test_self_similarity_near_one(self):
        dim = 1024
        rff = RFFMap(8, dim, 1.0, rng=RngStream(3))
        x = RngStream(4).uniform((50, 8), -1.0, 1.0)
        phi = rff_features(rff, Tensor(x)).data
        self_sim = np.sum(phi * phi, axis=1)
        assert np.all(np.abs(self_sim - 1.0) < 3.0 / np.sqrt(dim))

    def test_mae_nonincreasing_in_dim(self):
        seeds = range(200, 205)
        means = [np.mean([_kernel_mae(d, s) for s in seeds])
                 for d in (256, 512, 1024)]
        assert means[0] >= means[1] >= means[2]

    def test_width_mismatch(self):
        rff = RFFMap(4, 16, 1.0, rng=RngStream(0))
        with pytest.raises(ContractViolation):
            rff_features(rff, Tensor(np.zeros((2, 5))))

    def test_projection_frozen_under_optimizer(self):
        head = GPHead(4, dim=8, rng=RngStream(1))
        w_before = head.rff.w.value.data.copy()
        head.rff.w.gradient = np.ones_like(w_before)
        adam_step([head.rff.w, head.rff.b], lr=0.1, step=1)
        assert np.array_equal(head.rff.w.value.data, w_before)

    def test_no_gradient_into_projection(self):
        head = GPHead(3, dim=8, normalize_input=False, rng=RngStream(2))
        upstream = Parameter(RngStream(3).normal((2, 3)), "h")
        with Tape([upstream, head.rff.w]) as tape:
            loss = reduce_sum(rff_features(head.rff, upstream.value))
        grads = backward_pass(tape, loss)
        assert np.any(grads[upstream].data != 0.0)
        assert np.all(grads[head.rff.w].data == 0.0)


class TestGpForward:
    def test_zero_weights_zero_output(self):
        head = GPHead(4, dim=16, normalize_input=False, rng=RngStream(5))
        out = gp_forward(head, Tensor(RngStream(6).normal((3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_unit_selector(self):
        head = GPHead(4, dim=16, normalize_input=False, rng=RngStream(5))
        k = 7
        head.beta.value.data[k] = 1.0
        h = Tensor(RngStream(6).normal((3, 4)))
        out = gp_forward(head, h)
        phi = gp_features(head, h).data
        np.testing.assert_allclose(out.data, phi[:, k])

    def test_beta_gradient_is_feature_sum(self):
        head = GPHead(4, dim=16, normalize_input=False, rng=RngStream(5))
        h = Tensor(RngStream(6).normal((3, 4)))
        with Tape([head.beta]) as tape:
            loss = reduce_sum(gp_forward(head, h))
        backward_pass(tape, loss)
        phi = gp_features(head, h).data
        np.testing.assert_allclose(head.beta.gradient, phi.sum(axis=0))


class TestFitPrecision:
    def test_zero_samples_ridge_only(self):
        head = GPHead(2, dim=4, ridge=0.5, normalize_input=False, rng=RngStream(1))
        fit_precision(head, np.zeros((0, 4)), np.zeros(0))
        np.testing.assert_allclose(head.covariance, np.eye(4) / 0.5)

    def test_single_unit_feature(self):
        head = GPHead(2, dim=3, ridge=1.0, normalize_input=False, rng=RngStream(1))
        fit_precision(head, np.array([[1.0, 0.0, 0.0]]), np.array([1.0]))
        np.testing.assert_allclose(np.diag(head.covariance), [0.5, 1.0, 1.0])

    def test_duplicating_samples_shrinks_variance(self):
        rng = RngStream(8)
        head = GPHead(2, dim=6, ridge=0.1, normalize_input=False, rng=rng.split())
        feats = rng.normal((5, 6))
        queries = rng.normal((10, 6))
        fit_precision(head, feats, np.ones(5))
        v1 = np.einsum("bi,ij,bj->b", queries, head.covariance, queries)
        fit_precision(head, np.vstack([feats, feats]), np.ones(10))
        v2 = np.einsum("bi,ij,bj->b", queries, head.covariance, queries)
        assert np.all(v2 <= v1 + 1e-12)

    def test_monotone_information(self):
        # adding any feature never increases variance anywhere (Loewner order)
        rng = RngStream(9)
        head = GPHead(2, dim=8, ridge=0.2, normalize_input=False, rng=rng.split())
        feats = rng.normal((6, 8))
        queries = rng.normal((20, 8))
        fit_precision(head, feats[:5], np.ones(5))
        before = np.einsum("bi,ij,bj->b", queries, head.covariance, queries)
        fit_precision(head, feats, np.ones(6))
        after = np.einsum("bi,ij,bj->b", queries, head.covariance, queries)
        assert np.all(after <= before + 1e-12)

    def test_negative_weights_rejected(self):
        head = GPHead(2, dim=4, normalize_input=False, rng=RngStream(1))
        with pytest.raises(ContractViolation):
            fit_precision(head, np.ones((1, 4)), np.array([-1.0]))

    def test_inverse_residual_bound(self):
        rng = RngStream(10)
        head = GPHead(2, dim=32, ridge=1e-3, normalize_input=False, rng=rng.split())
        fit_precision(head, rng.normal((100, 32)), np.ones(100))
        residual = np.max(np.abs(head.covariance @ head.precision - np.eye(32)))
        assert residual < 1e-6


class TestGpPredict:
    def test_requires_fit(self):
        head = GPHead(2, dim=4, normalize_input=False, rng=RngStream(1))
        with pytest.raises(ContractViolation):
            gp_predict(head, np.zeros((1, 2)), "regression")

    def test_distance_awareness(self):
        rng = RngStream(11)
        head = GPHead(1, dim=2048, ridge=1e-3, normalize_input=False, rng=rng.split())
        train = rng.uniform((20, 1), -1.0, 1.0)
        phi = gp_features(head, Tensor(train)).data
        fit_precision(head, phi, np.ones(20))
        _, near = gp_predict(head, train[:1], "regression")
        _, far = gp_predict(head, np.array([[50.0]]), "regression")
        assert near[0] < far[0]

    def test_zero_beta_binary_gives_half(self):
        head = GPHead(2, dim=16, ridge=1e-3, normalize_input=False, rng=RngStream(1))
        fit_precision(head, np.zeros((0, 16)), np.zeros(0))
        prob, _ = gp_predict(head, RngStream(2).normal((5, 2)), "binary")
        np.testing.assert_allclose(prob, 0.5)

    def test_zero_variance_limit_matches_plain_sigmoid(self):
        head = GPHead(2, dim=16, ridge=1.0, normalize_input=False, rng=RngStream(1))
        head.beta.value.data = RngStream(3).normal((16,))
        fit_precision(head, np.zeros((0, 16)), np.zeros(0))
        head.covariance = np.zeros((16, 16))  # collapse the posterior
        h = RngStream(4).normal((6, 2))
        prob, std = gp_predict(head, h, "binary")
        logits = gp_features(head, Tensor(h)).data @ head.beta.value.data
        np.testing.assert_allclose(prob, sigmoid(logits), rtol=1e-12)
        np.testing.assert_array_equal(std, np.zeros(6))

    def test_variance_nonnegative(self):
        rng = RngStream(12)
        head = GPHead(3, dim=64, ridge=1e-3, normalize_input=False, rng=rng.split())
        fit_precision(head, rng.normal((40, 64)), np.ones(40))
        _, std = gp_predict(head, rng.normal((30, 3)), "regression")
        assert np.all(std >= 0.0)


class TestResetPrecision:
    def test_reset_matches_fresh_ridge_state(self):
        head = GPHead(2, dim=8, ridge=0.3, normalize_input=False, rng=RngStream(1))
        fit_precision(head, RngStream(2).normal((5, 8)), np.ones(5))
        reset_precision(head)
        assert not head.fitted
        np.testing.assert_allclose(head.precision, 0.3 * np.eye(8))
        fit_precision(head, np.zeros((0, 8)), np.zeros(0))
        np.testing.assert_allclose(head.covariance, np.eye(8) / 0.3)

    def test_reset_idempotent(self):
        head = GPHead(2, dim=8, normalize_input=False, rng=RngStream(1))
        reset_precision(head)
        p1 = head.precision.copy()
        reset_precision(head)
        np.testing.assert_array_equal(head.precision, p1)

    def test_fit_reset_fit_deterministic(self):
        head = GPHead(2, dim=8, normalize_input=False, rng=RngStream(1))
        feats = RngStream(2).normal((5, 8))
        fit_precision(head, feats, np.ones(5))
        first = head.covariance.copy()
        reset_precision(head)
        fit_precision(head, feats, np.ones(5))
        np.testing.assert_array_equal(head.covariance, first)


class TestClosedFormWeights:
    def test_matches_ridge_solution(self):
        rng = RngStream(13)
        head = GPHead(1, dim=32, ridge=0.5, normalize_input=False, rng=rng.split())
        x = rng.uniform((20, 1), -1.0, 1.0)
        y = np.sin(x[:, 0])
        phi = gp_features(head, Tensor(x)).data
        fit_output_weights(head, phi, y)
        expected = np.linalg.solve(0.5 * np.eye(32) + phi.T @ phi, phi.T @ y)
        np.testing.assert_allclose(head.beta.value.data, expected, rtol=1e-9)
