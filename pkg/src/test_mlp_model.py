"""
Tests for mlp_model.py
======================
Initialization, forward pass, parameter flattening, composite losses and
analytic gradients (checked against central finite differences).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cl_errors import ConfigurationError, InputError, NumericalError, ShapeError
from mlp_model import (
    Activation,
    Component,
    LossSpec,
    LossTerm,
    evaluate_terms,
    forward,
    loss_and_grad,
    model_init,
    params_get,
    params_set,
    predict_proba,
    softmax,
)

FD_STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale))


def numeric_grad(model, loss_fn) -> np.ndarray:
    theta = params_get(model)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += FD_STEP
        params_set(model, bumped)
        up = loss_fn()
        bumped[i] -= 2 * FD_STEP
        params_set(model, bumped)
        down = loss_fn()
        grad[i] = (up - down) / (2 * FD_STEP)
    params_set(model, theta)
    return grad


class TestModelInit:
    """Test model_init"""

    def test_same_seed_is_bit_identical(self):
        """dims (4, 400, 10), seed 7 twice gives identical parameters"""
        a = params_get(model_init((4, 400, 10), seed=7))
        b = params_get(model_init((4, 400, 10), seed=7))
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        """Another seed draws other weights"""
        a = params_get(model_init((4, 8, 3), seed=1))
        b = params_get(model_init((4, 8, 3), seed=2))
        assert not np.array_equal(a, b)

    def test_too_few_layers(self):
        """A single dimension is not a network"""
        with pytest.raises(ConfigurationError):
            model_init((4,), seed=0)

    def test_zero_width_layer(self):
        """Every layer needs at least one unit"""
        with pytest.raises(ConfigurationError):
            model_init((4, 0, 2), seed=0)

    def test_parameter_count(self):
        """(2, 3, 2) has 2*3+3 + 3*2+2 = 17 parameters"""
        model = model_init((2, 3, 2), seed=1)
        assert model.parameter_count == 17
        assert params_get(model).size == 17

    def test_biases_start_at_zero(self):
        """Biases are zero, weights within the Glorot range"""
        model = model_init((5, 8, 4), seed=3)
        assert all(np.all(b == 0) for b in model.biases)
        limit = math.sqrt(6.0 / (5 + 8))
        assert np.all(np.abs(model.weights[0]) <= limit)


class TestForward:
    """Test forward / softmax"""

    def test_zero_network_gives_zero_logits(self):
        """All-zero parameters give all-zero logits"""
        model = model_init((3, 5, 4), seed=0)
        params_set(model, np.zeros(model.parameter_count))
        logits = forward(model, np.random.default_rng(0).random((6, 3)))
        assert logits.shape == (6, 4)
        assert np.all(logits == 0)

    def test_uniform_softmax(self):
        """Zero logits give 1/C everywhere"""
        probs = softmax(np.zeros((2, 5)))
        assert np.allclose(probs, 0.2)

    def test_softmax_is_stable_for_large_logits(self):
        """Max shift keeps huge logits finite"""
        probs = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
        assert np.all(np.isfinite(probs))
        assert probs[0, 0] == pytest.approx(0.5)

    def test_hand_evaluated_two_layer_net(self):
        """1 hidden unit: h = w2 * relu(w1 * x + b1) + b2"""
        model = model_init((1, 1, 2), seed=0)
        # W0 (1x1), b0, W1 (1x2), b1
        params_set(model, np.array([2.0, -1.0, 3.0, -0.5, 0.25, 1.0]))
        logits = forward(model, np.array([[1.5]]))
        hidden = max(2.0 * 1.5 - 1.0, 0.0)
        assert logits[0] == pytest.approx([3.0 * hidden + 0.25, -0.5 * hidden + 1.0])

    def test_tanh_activation(self):
        model = model_init((1, 1, 1), seed=0, activation=Activation.TANH)
        params_set(model, np.array([1.0, 0.0, 1.0, 0.0]))
        assert forward(model, [[0.3]])[0, 0] == pytest.approx(math.tanh(0.3))

    def test_single_vector_is_one_row(self):
        model = model_init((3, 4, 2), seed=0)
        assert forward(model, [0.1, 0.2, 0.3]).shape == (1, 2)

    def test_wrong_width_raises(self):
        model = model_init((3, 4, 2), seed=0)
        with pytest.raises(ShapeError):
            forward(model, np.zeros((2, 5)))

    def test_predict_proba_rows_sum_to_one(self):
        model = model_init((3, 4, 5), seed=2)
        probs = predict_proba(model, np.random.default_rng(1).random((7, 3)))
        assert np.allclose(probs.sum(axis=1), 1.0)


class TestParams:
    """Test params_get / params_set"""

    def test_round_trip_is_bit_identical(self):
        model = model_init((3, 6, 2), seed=4)
        before = params_get(model)
        params_set(model, before)
        assert np.array_equal(params_get(model), before)

    def test_wrong_length_raises(self):
        model = model_init((3, 6, 2), seed=4)
        with pytest.raises(ShapeError):
            params_set(model, np.zeros(model.parameter_count + 1))

    def test_single_entry_locality(self):
        """Perturbing one entry changes exactly one entry"""
        model = model_init((3, 6, 2), seed=4)
        theta = params_get(model)
        bumped = theta.copy()
        bumped[5] += 1.0
        params_set(model, bumped)
        assert np.count_nonzero(params_get(model) != theta) == 1

    def test_flatten_order_starts_with_first_weight_matrix(self):
        """W0 row-major, then b0"""
        model = model_init((2, 3, 2), seed=0)
        theta = params_get(model)
        assert np.array_equal(theta[:6], model.weights[0].ravel())
        assert np.array_equal(theta[6:9], model.biases[0])

    def test_get_returns_a_copy(self):
        model = model_init((2, 3, 2), seed=0)
        theta = params_get(model)
        theta[:] = 0.0
        assert np.any(params_get(model) != 0.0)


class TestLosses:
    """Test loss_and_grad / evaluate_terms"""

    def test_uniform_cross_entropy_is_log_c(self):
        """Zero net, C=10 -> ln 10"""
        model = model_init((4, 5, 10), seed=0)
        params_set(model, np.zeros(model.parameter_count))
        losses, _ = loss_and_grad(model, np.ones((3, 4)), np.array([0, 4, 9]))
        assert losses.task_loss == pytest.approx(math.log(10))
        assert losses.total == pytest.approx(2.302585, abs=1e-6)

    def test_logit_match_identity_is_zero(self):
        """Targets equal to the current logits give zero loss and gradient"""
        model = model_init((3, 4, 2), seed=1)
        x = np.random.default_rng(0).random((5, 3))
        losses, grad = loss_and_grad(model, x, logit_targets=forward(model, x),
                                     spec=LossSpec(cross_entropy=False, logit_match=True))
        assert losses.logit_match_loss == 0.0
        assert np.all(grad == 0.0)

    def test_logit_match_is_mean_squared_distance(self):
        model = model_init((2, 3, 2), seed=1)
        x = np.array([[0.2, 0.4], [0.6, 0.1]])
        targets = forward(model, x) + np.array([[1.0, 0.0], [0.0, 2.0]])
        losses, _ = loss_and_grad(model, x, logit_targets=targets,
                                  spec=LossSpec(cross_entropy=False, logit_match=True))
        assert losses.logit_match_loss == pytest.approx((1.0 + 4.0) / 2)

    def test_spec_needs_a_component(self):
        with pytest.raises(ConfigurationError):
            LossSpec(cross_entropy=False, logit_match=False)

    def test_missing_logit_targets(self):
        model = model_init((2, 3, 2), seed=0)
        with pytest.raises(InputError):
            loss_and_grad(model, np.zeros((1, 2)), np.array([0]),
                          spec=LossSpec(cross_entropy=True, logit_match=True))

    def test_unexpected_logit_targets(self):
        model = model_init((2, 3, 2), seed=0)
        with pytest.raises(InputError):
            loss_and_grad(model, np.zeros((1, 2)), np.array([0]), logit_targets=np.zeros((1, 2)))

    def test_label_out_of_range(self):
        model = model_init((2, 3, 2), seed=0)
        with pytest.raises(InputError):
            loss_and_grad(model, np.zeros((2, 2)), np.array([0, 2]))

    def test_label_count_mismatch(self):
        model = model_init((2, 3, 2), seed=0)
        with pytest.raises(ShapeError):
            loss_and_grad(model, np.zeros((2, 2)), np.array([0]))

    def test_empty_batch(self):
        model = model_init((2, 3, 2), seed=0)
        with pytest.raises(InputError):
            loss_and_grad(model, np.zeros((0, 2)), np.array([], dtype=int))

    def test_non_finite_parameters_raise(self):
        model = model_init((2, 3, 2), seed=0)
        model.weights[0][0, 0] = np.nan
        with pytest.raises(NumericalError):
            loss_and_grad(model, np.ones((1, 2)), np.array([1]))

    def test_component_gradients_sum_to_total(self):
        rng = np.random.default_rng(5)
        model = model_init((3, 6, 4), seed=5)
        terms = [
            LossTerm(Component.TASK, rng.random((4, 3)), rng.integers(0, 4, 4)),
            LossTerm(Component.REPLAY_CE, rng.random((3, 3)), rng.integers(0, 4, 3)),
            LossTerm(Component.LOGIT_MATCH, rng.random((2, 3)), rng.normal(size=(2, 4))),
        ]
        result = evaluate_terms(model, terms)
        parts = sum(result.component_grads.values())
        assert np.allclose(parts, result.grad, rtol=0, atol=1e-14)

    def test_component_gradients_match_separate_evaluations(self):
        """Splitting one backward by rows equals separate per-term evaluations"""
        rng = np.random.default_rng(6)
        model = model_init((3, 5, 3), seed=6)
        x1, y1 = rng.random((4, 3)), rng.integers(0, 3, 4)
        x2, z2 = rng.random((2, 3)), rng.normal(size=(2, 3))
        result = evaluate_terms(model, [
            LossTerm(Component.TASK, x1, y1),
            LossTerm(Component.LOGIT_MATCH, x2, z2),
        ])
        _, g_task = loss_and_grad(model, x1, y1)
        _, g_match = loss_and_grad(model, x2, logit_targets=z2,
                                   spec=LossSpec(cross_entropy=False, logit_match=True))
        assert np.allclose(result.grad_of(Component.TASK), g_task, atol=1e-14)
        assert np.allclose(result.grad_of(Component.LOGIT_MATCH), g_match, atol=1e-14)
        assert np.all(result.grad_of(Component.REPLAY_CE) == 0.0)

    def test_shared_denominator_equals_merged_batch(self):
        """Two CE terms over a shared denominator behave like one stacked batch"""
        rng = np.random.default_rng(7)
        model = model_init((3, 5, 3), seed=7)
        x1, y1 = rng.random((4, 3)), rng.integers(0, 3, 4)
        x2, y2 = rng.random((6, 3)), rng.integers(0, 3, 6)
        split = evaluate_terms(model, [
            LossTerm(Component.TASK, x1, y1, 10),
            LossTerm(Component.REPLAY_CE, x2, y2, 10),
        ])
        merged_loss, merged_grad = loss_and_grad(model, np.vstack([x1, x2]), np.concatenate([y1, y2]))
        assert split.losses.total == pytest.approx(merged_loss.total, rel=1e-12)
        assert np.allclose(split.grad, merged_grad, atol=1e-14)


@st.composite
def gradient_cases(draw):
    dims = (
        draw(st.integers(1, 5)),
        draw(st.integers(1, 8)),
        draw(st.integers(2, 4)),
    )
    return {
        "dims": dims,
        "seed": draw(st.integers(0, 10_000)),
        "rows": draw(st.integers(1, 6)),
        "cross_entropy": draw(st.booleans()),
        "logit_match": draw(st.booleans()),
        "activation": draw(st.sampled_from([Activation.TANH, Activation.TANH, Activation.RELU])),
    }


class TestGradientCheck:
    """Analytic gradients against central finite differences"""

    def test_small_network_every_parameter(self):
        """dims (3, 4, 2): max relative error < 1e-5"""
        rng = np.random.default_rng(11)
        model = model_init((3, 4, 2), seed=11, activation=Activation.TANH)
        x, y = rng.random((5, 3)), rng.integers(0, 2, 5)
        _, analytic = loss_and_grad(model, x, y)
        numeric = numeric_grad(model, lambda: loss_and_grad(model, x, y)[0].total)
        assert relative_error(analytic, numeric) < 1e-5

    @settings(max_examples=60, deadline=None)
    @given(gradient_cases())
    def test_random_cases(self, case):
        """Random (model, batch, loss-spec) cases at dims <= (5, 8, 4)"""
        if not (case["cross_entropy"] or case["logit_match"]):
            case["cross_entropy"] = True
        rng = np.random.default_rng(case["seed"])
        model = model_init(case["dims"], seed=case["seed"], activation=case["activation"])
        if case["activation"] is Activation.RELU:
            # keep hidden pre-activations away from the kink
            model.biases[0][:] = 0.5
        x = rng.random((case["rows"], case["dims"][0]))
        y = rng.integers(0, case["dims"][-1], case["rows"])
        spec = LossSpec(case["cross_entropy"], case["logit_match"])
        z = rng.normal(size=(case["rows"], case["dims"][-1])) if spec.logit_match else None
        labels = y if spec.cross_entropy else None

        _, analytic = loss_and_grad(model, x, labels, z, spec)
        numeric = numeric_grad(model, lambda: loss_and_grad(model, x, labels, z, spec)[0].total)
        assert relative_error(analytic, numeric) < 1e-5
