import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcollab.errors import InputError, ShapeError, UsageError
from fedcollab.nn_core import (
    ModelParams,
    TrainingConfig,
    backward,
    cross_entropy_loss,
    evaluate,
    forward,
    init_model,
    sgd_step,
    softmax,
)


def make_model(weights, biases):
    return ModelParams(
        tuple(np.asarray(w, dtype=np.float64) for w in weights),
        tuple(np.asarray(b, dtype=np.float64) for b in biases),
    )


def constant_model(cls, n_features=4, n_classes=3):
    """Zero weights, bias pointing at ``cls``: predicts ``cls`` for every input."""
    b = np.zeros(n_classes)
    b[cls] = 1.0
    return make_model([np.zeros((n_features, n_classes))], [b])


def numeric_grad(model, x, y, eps=1e-5):
    flat = model.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        lp = cross_entropy_loss(forward(model.unflatten(plus), x)[0], y)
        lm = cross_entropy_loss(forward(model.unflatten(minus), x)[0], y)
        out[i] = (lp - lm) / (2 * eps)
    return out


class TestForward:
    def test_zero_model_gives_zero_logits(self):
        model = make_model([np.zeros((5, 4)), np.zeros((4, 3))], [np.zeros(4), np.zeros(3)])
        logits, _ = forward(model, np.random.default_rng(0).normal(size=(6, 5)))
        assert logits.shape == (6, 3)
        assert np.all(logits == 0)

    def test_identity_layer_passes_one_hot_through(self):
        model = make_model([np.eye(4)], [np.zeros(4)])
        x = np.array([[0.0, 0.0, 1.0, 0.0]])
        logits, _ = forward(model, x)
        np.testing.assert_array_equal(logits, x)

    def test_hand_computed_two_layer_net(self):
        # x @ W1 + b1 -> relu -> @ W2 + b2, expanded by hand:
        # row [1, 2]:     z1 = [5, -1] -> h = [5, 0]     -> logits [5.5, 0, 10]
        # row [-1, 0.5]:  z1 = [0, .25] -> h = [0, .25]  -> logits [.25, .25, 0]
        model = make_model(
            [[[1, -1], [2, 0.5]], [[1, 0, 2], [-1, 1, 0]]],
            [[0, -1], [0.5, 0, 0]],
        )
        logits, cache = forward(model, np.array([[1.0, 2.0], [-1.0, 0.5]]))
        np.testing.assert_allclose(logits, [[5.5, 0.0, 10.0], [0.25, 0.25, 0.0]])
        np.testing.assert_allclose(cache.pre_activations[0], [[5, -1], [0, 0.25]])

    def test_width_mismatch(self):
        model = init_model((4, 3), seed=0)
        with pytest.raises(ShapeError):
            forward(model, np.zeros((2, 5)))

    def test_incompatible_layers_rejected(self):
        with pytest.raises(ShapeError):
            make_model([np.zeros((4, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert cross_entropy_loss(np.zeros((3, 10)), [0, 4, 9]) == pytest.approx(math.log(10), abs=1e-12)
        assert math.log(10) == pytest.approx(2.302585, abs=1e-6)

    def test_saturated(self):
        logits = np.zeros((1, 10))
        logits[0, 3] = 1000.0
        assert cross_entropy_loss(logits, [3]) < 1e-6

    def test_two_class_calculator_value(self):
        # -ln(e / (e + 1)) evaluated by hand
        assert cross_entropy_loss(np.array([[1.0, 0.0]]), [0]) == pytest.approx(0.313262, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            cross_entropy_loss(np.zeros((1, 3)), [3])
        with pytest.raises(InputError):
            cross_entropy_loss(np.zeros((1, 3)), [-1])

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.data())
    def test_nonnegative(self, row, data):
        label = data.draw(st.integers(0, len(row) - 1))
        loss = cross_entropy_loss(np.array([row]), [label])
        assert loss >= 0 and math.isfinite(loss)


class TestBackward:
    def test_zero_scale(self):
        model = init_model((6, 5, 3), seed=1)
        x = np.random.default_rng(1).normal(size=(4, 6))
        _, cache = forward(model, x)
        grads = backward(model, cache, [0, 1, 2, 0], scale=0.0)
        assert all(np.all(g == 0) for g in grads.arrays())

    def test_output_bias_closed_form(self):
        model = init_model((6, 5, 3), seed=2)
        x = np.random.default_rng(2).normal(size=(1, 6))
        logits, cache = forward(model, x)
        grads = backward(model, cache, [2])
        expected = softmax(logits)[0] - np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(grads.biases[-1], expected, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        model = init_model((5, 7, 6, 4), seed=seed)
        # nonzero biases so ReLU kinks are not hit at exactly zero
        model = model.unflatten(model.flatten() + rng.normal(scale=0.1, size=model.num_params))
        x = rng.normal(size=(8, 5))
        y = rng.integers(0, 4, size=8)
        _, cache = forward(model, x)
        analytic = backward(model, cache, y).flatten()
        numeric = numeric_grad(model, x, y)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
        assert rel.max() < 1e-4

    def test_scale_is_linear(self):
        model = init_model((4, 3, 2), seed=3)
        x = np.random.default_rng(3).normal(size=(5, 4))
        y = [0, 1, 1, 0, 1]
        _, cache = forward(model, x)
        g1 = backward(model, cache, y).flatten()
        g3 = backward(model, cache, y, scale=0.25).flatten()
        np.testing.assert_allclose(g3, 0.25 * g1, rtol=1e-12)

    def test_stale_cache(self):
        model = init_model((4, 3), seed=0)
        _, cache = forward(model, np.zeros((1, 4)))
        other = init_model((4, 3), seed=1)
        with pytest.raises(UsageError):
            backward(other, cache, [0])


class TestSgdStep:
    def test_zero_learning_rate(self):
        model = init_model((4, 3), seed=0)
        grads = init_model((4, 3), seed=1)
        assert sgd_step(model, grads, 0.0).equals(model)

    def test_zero_gradients(self):
        model = init_model((4, 3), seed=0)
        zeros = model.unflatten(np.zeros(model.num_params))
        assert sgd_step(model, zeros, 0.1).equals(model)

    def test_scalar_arithmetic(self):
        model = make_model([[[1.0]]], [[0.0]])
        grads = make_model([[[0.5]]], [[0.0]])
        assert sgd_step(model, grads, 0.1).weights[0][0, 0] == pytest.approx(0.95)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sgd_step(init_model((4, 3), 0), init_model((4, 2), 0), 0.1)

    @settings(max_examples=30)
    @given(st.floats(1e-4, 1.0), st.integers(0, 2**32))
    def test_two_half_steps_equal_one_full_step(self, lr, seed):
        model = init_model((3, 4, 2), seed=seed)
        grads = init_model((3, 4, 2), seed=seed + 1)
        full = sgd_step(model, grads, lr)
        halves = sgd_step(sgd_step(model, grads, lr / 2), grads, lr / 2)
        np.testing.assert_allclose(full.flatten(), halves.flatten(), rtol=1e-12, atol=1e-15)


class TestEvaluate:
    def test_constant_predictor(self):
        x = np.random.default_rng(0).normal(size=(5, 4))
        model = constant_model(0)
        assert evaluate(model, x, [0] * 5) == 1.0
        assert evaluate(model, x, [1] * 5) == 0.0

    def test_three_of_four(self):
        model = constant_model(2)
        assert evaluate(model, np.zeros((4, 4)), [2, 2, 1, 2]) == 0.75

    def test_ties_go_to_lowest_index(self):
        model = make_model([np.zeros((2, 3))], [np.zeros(3)])
        assert evaluate(model, np.zeros((3, 2)), [0, 0, 0]) == 1.0

    def test_empty_input(self):
        with pytest.raises(InputError):
            evaluate(constant_model(0), np.zeros((0, 4)), [])


def test_init_is_deterministic_and_seed_dependent():
    a, b, c = init_model((784, 128, 10), 5), init_model((784, 128, 10), 5), init_model((784, 128, 10), 6)
    assert a.equals(b)
    assert not a.equals(c)
    limit = math.sqrt(6 / (784 + 128))
    assert np.abs(a.weights[0]).max() <= limit


def test_training_config_validation():
    with pytest.raises(InputError):
        TrainingConfig(learning_rate=0.0)
    with pytest.raises(InputError):
        TrainingConfig(batch_size=0)
