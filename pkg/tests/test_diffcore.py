"""Autodiff core: tape mechanics, op gradients, optimizer, RNG,
initializers, gradient checker, and the checkpoint format."""

import numpy as np
import pytest

from dgpa.diffcore import (
    FanInScaled,
    Gaussian,
    Parameter,
    RngStream,
    Tape,
    Tensor,
    Uniform,
    absolute,
    adam_step,
    backward_pass,
    conv1d,
    finite_diff_check,
    load_checkpoint,
    matmul,
    maxpool1d,
    reduce_mean,
    reduce_sum,
    relu,
    save_checkpoint,
    seeded_init,
    sqrt,
    square,
)
from dgpa.errors import CheckpointError, ContractViolation, StochasticForwardError


class TestBackwardPass:
    def test_sum_gradient_is_ones(self):
        p = Parameter([1.0, 2.0, 3.0], "p")
        with Tape([p]) as tape:
            loss = reduce_sum(p.value)
        grads = backward_pass(tape, loss)
        np.testing.assert_array_equal(grads[p].data, [1.0, 1.0, 1.0])

    def test_quadratic_gradient(self):
        p = Parameter([2.0, -1.0], "p")
        with Tape([p]) as tape:
            loss = reduce_sum(square(p.value))
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [4.0, -2.0])

    def test_non_scalar_loss_rejected(self):
        p = Parameter([1.0, 2.0], "p")
        with Tape([p]) as tape:
            out = square(p.value)
        with pytest.raises(ContractViolation):
            backward_pass(tape, out)

    def test_non_participating_parameter_gets_zeros(self):
        p = Parameter([1.0], "p")
        q = Parameter([5.0, 6.0], "q")
        with Tape([p, q]) as tape:
            loss = reduce_sum(square(p.value))
        grads = backward_pass(tape, loss)
        np.testing.assert_array_equal(grads[q].data, [0.0, 0.0])

    def test_tape_cleared_and_reusable(self):
        p = Parameter([3.0], "p")
        tape = Tape([p])
        with tape:
            loss = reduce_sum(square(p.value))
        backward_pass(tape, loss)
        assert tape.nodes == []
        assert p.value.node is None
        with tape:
            loss = reduce_sum(p.value * 5.0)
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [5.0])

    def test_shared_parameter_accumulates(self):
        p = Parameter([1.0, 1.0], "p")
        with Tape([p]) as tape:
            loss = reduce_sum(square(p.value)) + reduce_sum(p.value * 3.0)
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [5.0, 5.0])

    def test_backward_linear_in_graph_sum(self):
        # gradient of (f1 + f2) equals gradient of f1 plus gradient of f2
        rng = RngStream(3)
        p = Parameter(rng.normal((4,)), "p")
        c1, c2 = rng.normal((4,)), rng.normal((4,))

        def f1():
            return reduce_sum(square(p.value) * c1)

        def f2():
            return reduce_mean(absolute(p.value - c2))

        grads = []
        for fn in (f1, f2, lambda: f1() + f2()):
            with Tape([p]) as tape:
                loss = fn()
            backward_pass(tape, loss)
            grads.append(p.gradient.copy())
        np.testing.assert_allclose(grads[0] + grads[1], grads[2], rtol=1e-12)

    def test_outputs_stay_finite(self):
        rng = RngStream(9)
        p = Parameter(rng.normal((5, 5)), "p")
        x = Tensor(rng.normal((5, 5)))
        with Tape([p]) as tape:
            out = reduce_sum(sqrt(square(matmul(p.value, x)) + 1.0))
        backward_pass(tape, out)
        assert np.isfinite(out.data).all()
        assert np.isfinite(p.gradient).all()


class TestOps:
    def test_abs_subgradient_zero_at_kink(self):
        p = Parameter([0.0, -2.0], "p")
        with Tape([p]) as tape:
            loss = reduce_sum(absolute(p.value))
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [0.0, -1.0])

    def test_sqrt_subgradient_zero_at_zero(self):
        p = Parameter([0.0, 4.0], "p")
        with Tape([p]) as tape:
            loss = reduce_sum(sqrt(p.value))
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [0.0, 0.25])

    def test_broadcast_add_unbroadcasts_gradient(self):
        p = Parameter([1.0, 2.0], "bias")
        x = Tensor(np.zeros((3, 2)))
        with Tape([p]) as tape:
            loss = reduce_sum(x + p.value)
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient, [3.0, 3.0])

    def test_conv_identity_kernel(self):
        x = Tensor(np.arange(8.0).reshape(1, 1, 8))
        w = Tensor(np.ones((1, 1, 1)))
        out = conv1d(x, w, stride=1, padding="same")
        np.testing.assert_array_equal(out.data, x.data)

    def test_conv_moving_average(self):
        # kernel [1,1,1]/3 with zero padding on [1,2,3,4]
        x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        w = Tensor(np.full((1, 1, 3), 1.0 / 3.0))
        out = conv1d(x, w, stride=1, padding="same")
        np.testing.assert_allclose(out.data[0, 0], [1.0, 2.0, 3.0, 7.0 / 3.0])

    def test_conv_stride2_halves_length(self):
        x = Tensor(np.zeros((2, 1, 256)))
        w = Tensor(np.zeros((4, 1, 3)))
        assert conv1d(x, w, stride=2, padding="same").shape == (2, 4, 128)

    def test_conv_channel_mismatch(self):
        with pytest.raises(ContractViolation):
            conv1d(Tensor(np.zeros((1, 2, 8))), Tensor(np.zeros((1, 3, 3))))

    def test_maxpool_basic(self):
        x = Tensor(np.array([[[1.0, 3.0, 2.0, 5.0]]]))
        np.testing.assert_array_equal(maxpool1d(x).data, [[[3.0, 5.0]]])

    def test_maxpool_odd_length(self):
        x = Tensor(np.zeros((2, 3, 15)))
        assert maxpool1d(x).shape == (2, 3, 8)

    def test_maxpool_tie_routes_first(self):
        p = Parameter(np.ones((1, 1, 4)), "p")
        with Tape([p]) as tape:
            loss = reduce_sum(maxpool1d(p.value))
        backward_pass(tape, loss)
        np.testing.assert_array_equal(p.gradient[0, 0], [1.0, 0.0, 1.0, 0.0])


class TestAdam:
    def test_zero_gradient_leaves_parameter(self):
        p = Parameter([1.5, -2.0], "p")
        adam_step([p], lr=0.1, step=1)
        np.testing.assert_array_equal(p.value.data, [1.5, -2.0])

    def test_first_step_magnitude(self):
        p = Parameter([0.0], "p")
        p.gradient = np.array([1.0])
        adam_step([p], lr=0.1, step=1)
        np.testing.assert_allclose(p.value.data, [-0.1], atol=1e-8)

    def test_frozen_parameter_untouched(self):
        p = Parameter([1.0, 1.0], "frozen", trainable=False)
        p.gradient = np.array([9.0, 9.0])
        adam_step([p], lr=0.5, step=1)
        np.testing.assert_array_equal(p.value.data, [1.0, 1.0])

    def test_step_must_be_positive(self):
        with pytest.raises(ContractViolation):
            adam_step([Parameter([0.0], "p")], step=0)

    def test_hundred_step_trajectory_is_deterministic(self):
        def run():
            rng = RngStream(12)
            w = Parameter(rng.normal((6, 4)), "w")
            b = Parameter(np.zeros(4), "b")
            x = rng.normal((8, 6))
            y = rng.normal((8, 4))
            for step in range(1, 101):
                with Tape([w, b]) as tape:
                    pred = matmul(Tensor(x), w.value) + b.value
                    loss = reduce_mean(square(pred - y))
                backward_pass(tape, loss)
                adam_step([w, b], lr=1e-2, step=step)
            return w.value.data.copy(), b.value.data.copy()

        w1, b1 = run()
        w2, b2 = run()
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)


class TestRngStream:
    def test_same_state_same_draws(self):
        a = RngStream(99).normal((10,))
        b = RngStream(99).normal((10,))
        assert np.array_equal(a, b)

    def test_counter_advances(self):
        s = RngStream(1)
        first = s.normal((4,))
        second = s.normal((4,))
        assert not np.array_equal(first, second)
        assert s.counter == 2

    def test_split_streams_differ(self):
        parent = RngStream(5)
        a, b = parent.split(), parent.split()
        assert a.seed != b.seed
        assert not np.array_equal(a.normal((8,)), b.normal((8,)))


class TestSeededInit:
    def test_determinism(self):
        a = seeded_init((3, 4), Gaussian(1.0), RngStream(2))
        b = seeded_init((3, 4), Gaussian(1.0), RngStream(2))
        assert np.array_equal(a.data, b.data)

    def test_uniform_phase_mean(self):
        draws = seeded_init((100000,), Uniform(0.0, 2.0 * np.pi), RngStream(4))
        assert abs(draws.data.mean() - np.pi) < 0.05

    def test_gaussian_variance(self):
        draws = seeded_init((100000,), Gaussian(1.0), RngStream(4))
        assert abs(draws.data.var() - 1.0) < 0.05

    def test_fan_in_scaling(self):
        draws = seeded_init((512, 128, 3), FanInScaled(), RngStream(4))
        expected = np.sqrt(2.0 / (128 * 3))
        assert abs(draws.data.std() - expected) / expected < 0.05

    def test_invalid_schemes(self):
        with pytest.raises(ContractViolation):
            Gaussian(0.0)
        with pytest.raises(ContractViolation):
            Uniform(1.0, 1.0)
        with pytest.raises(ContractViolation):
            seeded_init((), Gaussian(1.0), RngStream(0))


class TestFiniteDiffCheck:
    def test_dense_layer_passes(self):
        rng = RngStream(8)
        w = Parameter(rng.normal((5, 3)), "w")
        b = Parameter(rng.normal((3,)), "b")
        r = rng.normal((4, 3))
        probe = Tensor(rng.normal((4, 5)))

        def forward(x):
            return reduce_sum((matmul(x, w.value) + b.value) * r)

        report = finite_diff_check(forward, [w, b], probe, rng=rng.split())
        assert report.max_relative_error < 1e-4

    def test_constant_forward_gives_zero_both_ways(self):
        p = Parameter([1.0, 2.0], "p")

        def forward(x):
            return Tensor(np.array(3.14))

        report = finite_diff_check(forward, [p], Tensor(np.zeros(1)))
        assert report.max_relative_error == 0.0

    def test_stochastic_forward_refused(self):
        p = Parameter([1.0], "p")
        noisy = RngStream(0)

        def forward(x):
            return Tensor(noisy.normal(()))

        with pytest.raises(StochasticForwardError):
            finite_diff_check(forward, [p], Tensor(np.zeros(1)))

    def test_step_bounds(self):
        p = Parameter([1.0], "p")
        with pytest.raises(ContractViolation):
            finite_diff_check(lambda x: reduce_sum(p.value), [p],
                              Tensor(np.zeros(1)), step=0.5)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = RngStream(6)
        arrays = {
            "layer/w": rng.normal((4, 3, 2)),
            "layer/b": rng.normal((7,)),
            "meta/flag": np.array([1.0]),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert np.array_equal(loaded[k], arrays[k])

    def test_bytes_are_deterministic(self, tmp_path):
        arrays = {"b": np.arange(3.0), "a": np.ones((2, 2))}
        p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        save_checkpoint(p1, arrays)
        save_checkpoint(p2, dict(reversed(list(arrays.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        arrays = {"w": np.arange(10.0)}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
