"""Neural net tests: forward math, gradient checks, Adam, checkpoints."""

import numpy as np
import pytest

from netop import neural
from netop.neural import (
    AdamHyper,
    BadMagicError,
    CheckpointError,
    ShapeError,
    TruncatedCheckpointError,
)


def small_model(seed=0, n_frequencies=neural.N_FREQUENCIES):
    return neural.init(seed, (16, 8, 8, 14), n_actions=2, n_quantiles=7, n_frequencies=n_frequencies)


class TestInit:
    def test_deterministic(self):
        a = neural.init(3)
        b = neural.init(3)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_different_seeds_differ(self):
        a = neural.init(3)
        b = neural.init(4)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_biases_zero(self):
        m = neural.init(0)
        assert all(np.all(b == 0.0) for b in m.biases)

    def test_outputs_in_open_unit_interval(self):
        m = neural.init(0)
        rng = np.random.default_rng(1)
        scores, _ = neural.forward(m, rng.random((5, 16)))
        assert scores.shape == (5, 104, 7)
        assert np.all(scores > 0.0) and np.all(scores < 1.0)

    def test_params_on_float32_grid(self):
        m = neural.init(0)
        for w in m.weights:
            assert np.array_equal(w, w.astype(np.float32).astype(np.float64))

    def test_bad_output_width_rejected(self):
        with pytest.raises(ShapeError):
            neural.init(0, (16, 8, 100), n_actions=2, n_quantiles=7)


class TestForward:
    def test_zero_input_finite_scores(self):
        m = neural.init(2)
        scores, _ = neural.forward(m, np.zeros((1, 16)))
        assert np.all(np.isfinite(scores))
        assert np.all((scores > 0) & (scores < 1))

    def test_batch_row_matches_single(self):
        m = neural.init(5)
        rng = np.random.default_rng(0)
        batch = rng.random((6, 16))
        all_scores, _ = neural.forward(m, batch)
        for i in range(6):
            row, _ = neural.forward(m, batch[i : i + 1])
            np.testing.assert_allclose(all_scores[i], row[0], rtol=0, atol=1e-12)

    def test_toy_network_hand_computed(self):
        # 2-2-2 plain net (no feature expansion), fixed weights, worked by hand.
        m = neural.QuantileModel(
            dims=(2, 2, 2),
            n_actions=1,
            n_quantiles=2,
            n_frequencies=0,
            weights=[np.array([[0.5, -1.0], [0.25, 0.5]]), np.array([[1.0, 0.0], [-0.5, 2.0]])],
            biases=[np.array([0.1, -0.2]), np.array([0.0, 0.3])],
        )
        x = np.array([[0.8, 0.4]])
        # z1 = [0.8*0.5 + 0.4*0.25 + 0.1, 0.8*-1 + 0.4*0.5 - 0.2] = [0.6, -0.8]
        # h1 = relu(z1) = [0.6, 0.0]
        # z2 = [0.6*1 + 0*-0.5 + 0, 0.6*0 + 0*2 + 0.3] = [0.6, 0.3]
        expected = 1.0 / (1.0 + np.exp(-np.array([0.6, 0.3])))
        scores, trace = neural.forward(m, x)
        np.testing.assert_allclose(scores[0, 0], expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(trace.pre_activations[0][0], [0.6, -0.8], atol=1e-12)

    def test_featurize_layout(self):
        x = np.array([[0.25, 0.5]])
        f = neural.featurize(x, 1)
        assert f.shape[1] == neural.feature_width(2, 1)
        np.testing.assert_allclose(f[0, :2], [0.25, 0.5], atol=1e-15)
        np.testing.assert_allclose(f[0, 2:4], np.sin(np.pi * x[0]), atol=1e-15)
        np.testing.assert_allclose(f[0, 4:6], np.cos(np.pi * x[0]), atol=1e-15)
        # pairwise difference cosines fill the tail
        d = 0.25 - 0.5
        expected_tail = [np.cos(np.pi * 2.0**k * d) for k in neural.DIFF_OCTAVES]
        np.testing.assert_allclose(f[0, 6:], expected_tail, atol=1e-15)

    def test_featurize_identity_at_zero_frequencies(self):
        x = np.array([[0.1, 0.9, 0.3]])
        assert np.array_equal(neural.featurize(x, 0), x)

    def test_equal_slots_give_unit_difference_features(self):
        f = neural.featurize(np.array([[0.37, 0.37]]), 2)
        np.testing.assert_allclose(f[0, -len(neural.DIFF_OCTAVES):], 1.0, atol=1e-15)

    def test_shape_errors(self):
        m = neural.init(0)
        with pytest.raises(ShapeError):
            neural.forward(m, np.zeros((3, 15)))
        with pytest.raises(ShapeError):
            neural.forward(m, np.zeros(16))


class TestGreedy:
    def test_all_equal_grid_ties_to_action_zero(self):
        assert neural.greedy_action(np.full((104, 7), 0.5)) == 0

    def test_designated_row_wins(self):
        grid = np.full((104, 7), 0.1)
        grid[7] = 0.9
        assert neural.greedy_action(grid) == 7

    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            grid = rng.random((104, 7))
            means = [sum(row) / len(row) for row in grid]  # brute-force scan
            best = 0
            for a in range(104):
                if means[a] > means[best]:
                    best = a
            assert neural.greedy_action(grid) == best

    def test_mean_scores(self):
        grid = np.arange(14.0).reshape(2, 7)
        np.testing.assert_allclose(neural.mean_scores(grid), [3.0, 10.0])


class TestBackward:
    def test_zero_output_gradient_gives_zero_param_gradients(self):
        m = small_model()
        rng = np.random.default_rng(0)
        _, trace = neural.forward(m, rng.random((3, 16)))
        grads = neural.backward(m, trace, np.zeros((3, 2, 7)))
        assert all(np.all(g == 0) for g in grads.weights)
        assert all(np.all(g == 0) for g in grads.biases)

    def test_linearity(self):
        m = small_model()
        rng = np.random.default_rng(1)
        _, trace = neural.forward(m, rng.random((4, 16)))
        d1 = rng.normal(size=(4, 2, 7))
        d2 = rng.normal(size=(4, 2, 7))
        g1 = neural.backward(m, trace, d1)
        g2 = neural.backward(m, trace, d2)
        g12 = neural.backward(m, trace, d1 + d2)
        for a, b, c in zip(g12.weights, g1.weights, g2.weights):
            np.testing.assert_allclose(a, b + c, rtol=1e-12, atol=1e-12)

    def test_finite_difference_agreement(self):
        # Central differences on a randomized 16-8-8-14 model.
        m = small_model(seed=11)
        rng = np.random.default_rng(42)
        x = rng.random((4, 16))
        dout = rng.normal(size=(4, 2, 7))

        def loss():
            scores, _ = neural.forward(m, x)
            return float((scores * dout).sum())

        _, trace = neural.forward(m, x)
        grads = neural.backward(m, trace, dout)
        h = 1e-5
        checked = 0
        for params, grad_arrays in ((m.weights, grads.weights), (m.biases, grads.biases)):
            for p, g in zip(params, grad_arrays):
                flat_p = p.ravel()
                flat_g = g.ravel()
                for k in rng.integers(0, flat_p.size, size=4):
                    orig = flat_p[k]
                    flat_p[k] = orig + h
                    up = loss()
                    flat_p[k] = orig - h
                    down = loss()
                    flat_p[k] = orig
                    fd = (up - down) / (2 * h)
                    denom = max(abs(fd), abs(flat_g[k]), 1e-8)
                    assert abs(fd - flat_g[k]) / denom <= 1e-4
                    checked += 1
        assert checked >= 24

    def test_shape_error(self):
        m = small_model()
        _, trace = neural.forward(m, np.zeros((2, 16)))
        with pytest.raises(ShapeError):
            neural.backward(m, trace, np.zeros((2, 14)))


class TestAdam:
    def tiny_model(self):
        m = neural.QuantileModel(
            dims=(1, 1),
            n_actions=1,
            n_quantiles=1,
            n_frequencies=0,
            weights=[np.zeros((1, 1))],
            biases=[np.zeros(1)],
        )
        return m, neural.adam_init(m)

    def test_zero_gradient_keeps_parameters(self):
        m, state = self.tiny_model()
        grads = neural.Gradients(weights=[np.zeros((1, 1))], biases=[np.zeros(1)])
        neural.adam_step(m, grads, state)
        assert state.t == 1
        assert m.weights[0][0, 0] == 0.0

    def test_first_step_hand_computed(self):
        # w=0, g=1, lr=0.1: bias correction makes the first step ~ lr * sign(g).
        m, state = self.tiny_model()
        grads = neural.Gradients(weights=[np.ones((1, 1))], biases=[np.zeros(1)])
        neural.adam_step(m, grads, state, AdamHyper(learning_rate=0.1))
        assert abs(m.weights[0][0, 0] - (-0.1)) < 1e-7

    def test_trajectories_deterministic(self):
        runs = []
        for _ in range(2):
            m = small_model(seed=3)
            state = neural.adam_init(m)
            rng = np.random.default_rng(77)
            for _ in range(5):
                x = rng.random((4, 16))
                dout = rng.normal(size=(4, 2, 7))
                _, trace = neural.forward(m, x)
                grads = neural.backward(m, trace, dout)
                neural.adam_step(m, grads, state)
            runs.append(m)
        for wa, wb in zip(runs[0].weights, runs[1].weights):
            assert np.array_equal(wa, wb)

    def test_shape_mismatch(self):
        m, state = self.tiny_model()
        grads = neural.Gradients(weights=[np.zeros((2, 1))], biases=[np.zeros(1)])
        with pytest.raises(ShapeError):
            neural.adam_step(m, grads, state)


class TestCheckpoint:
    def roundtrip(self, with_meta=None):
        m = small_model(seed=9)
        state = neural.adam_init(m)
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.random((2, 16))
            _, trace = neural.forward(m, x)
            grads = neural.backward(m, trace, rng.normal(size=(2, 2, 7)))
            neural.adam_step(m, grads, state)
        blob = neural.save_checkpoint(m, state, with_meta or {})
        return m, state, blob

    def test_bit_identical_forward_after_round_trip(self):
        m, _, blob = self.roundtrip()
        m2, _, _ = neural.load_checkpoint(blob)
        x = np.random.default_rng(5).random((3, 16))
        a, _ = neural.forward(m, x)
        b, _ = neural.forward(m2, x)
        assert np.array_equal(a, b)

    def test_adam_state_round_trips(self):
        m, state, blob = self.roundtrip()
        _, state2, meta = neural.load_checkpoint(blob)
        assert state2.t == state.t
        for a, b in zip(state.m_weights, state2.m_weights):
            assert np.array_equal(a, b)
        for a, b in zip(state.v_biases, state2.v_biases):
            assert np.array_equal(a, b)

    def test_metadata_carried(self):
        _, _, blob = self.roundtrip(with_meta={"vocab_hash": "abc", "train_step": 17})
        _, _, meta = neural.load_checkpoint(blob)
        assert meta["vocab_hash"] == "abc"
        assert meta["train_step"] == 17
        assert meta["schema"] == "netop-ckpt-1"

    def test_save_is_deterministic(self):
        _, _, a = self.roundtrip()
        _, _, b = self.roundtrip()
        assert a == b

    def test_bad_magic(self):
        _, _, blob = self.roundtrip()
        with pytest.raises(BadMagicError):
            neural.load_checkpoint(b"XXXXXXXX" + blob[8:])

    def test_truncation(self):
        _, _, blob = self.roundtrip()
        with pytest.raises(TruncatedCheckpointError):
            neural.load_checkpoint(blob[: len(blob) - 10])
        with pytest.raises(TruncatedCheckpointError):
            neural.load_checkpoint(blob[:10])

    def test_trailing_bytes_rejected(self):
        _, _, blob = self.roundtrip()
        with pytest.raises(CheckpointError):
            neural.load_checkpoint(blob + b"\x00\x00\x00\x00")
