"""Prediction models: backpropagation, loss, optimizer and persistence."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voltreg.predictor import (
    MLP,
    AdamState,
    Normalizer,
    SitePredictor,
    StaleTapeError,
    adam_step,
    backward,
    clamp_prediction,
    forward,
    load_checkpoint,
    mse_and_grad,
    save_checkpoint,
)


def _small(seed=0, dims=(3, 4, 2)):
    rng = np.random.default_rng(seed)
    model = MLP.init(dims, rng)
    # nonzero biases keep hidden units away from the ReLU kink at random inputs
    for b in model.biases:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    return model, rng


def test_zero_model_outputs_zero():
    model = MLP((3, 5, 2), [np.zeros((3, 5)), np.zeros((5, 2))], [np.zeros(5), np.zeros(2)])
    out, _ = forward(model, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, [0.0, 0.0])


def test_single_linear_layer_is_identity():
    model = MLP((3, 3), [np.eye(3)], [np.zeros(3)])
    x = np.array([-1.0, 0.5, 2.0])
    np.testing.assert_array_equal(forward(model, x)[0], x)


def test_forward_is_pure():
    model, rng = _small()
    x = rng.standard_normal(3)
    a, _ = forward(model, x)
    b, _ = forward(model, x)
    np.testing.assert_array_equal(a, b)


def test_dimension_mismatch():
    model, _ = _small()
    with pytest.raises(ValueError):
        forward(model, np.zeros(4))


def test_backward_of_zero_cotangent():
    model, rng = _small()
    _, tape = forward(model, rng.standard_normal(3))
    assert all(not np.any(g) for g in backward(model, tape, np.zeros(2)))


def test_backward_matches_finite_differences():
    h = 1e-6
    for seed in range(5):
        model, rng = _small(seed)
        x = rng.standard_normal(3)
        w = rng.standard_normal(2)
        out, tape = forward(model, x)
        grads = backward(model, tape, w)
        for p, g in zip(model.params, grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                fp = w @ forward(model, x)[0]
                flat[i] = old - h
                fm = w @ forward(model, x)[0]
                flat[i] = old
                fd = (fp - fm) / (2 * h)
                assert abs(gflat[i] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_backward_is_linear_in_cotangent():
    model, rng = _small(3)
    _, tape = forward(model, rng.standard_normal(3))
    u, v = rng.standard_normal(2), rng.standard_normal(2)
    gu, gv = backward(model, tape, u), backward(model, tape, v)
    guv = backward(model, tape, 2.0 * u - 3.0 * v)
    for a, b, c in zip(gu, gv, guv):
        np.testing.assert_allclose(c, 2.0 * a - 3.0 * b, atol=1e-12)


def test_batched_backward_sums_rows():
    model, rng = _small(4)
    X = rng.standard_normal((5, 3))
    G = rng.standard_normal((5, 2))
    _, tape = forward(model, X)
    batched = backward(model, tape, G)
    summed = [np.zeros_like(p) for p in model.params]
    for x, g in zip(X, G):
        _, t = forward(model, x)
        for acc, part in zip(summed, backward(model, t, g)):
            acc += part
    for a, b in zip(batched, summed):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_stale_tape_is_rejected():
    model, rng = _small()
    _, tape = forward(model, rng.standard_normal(3))
    adam_step(model, [np.ones_like(p) for p in model.params], AdamState.for_model(model))
    with pytest.raises(StaleTapeError):
        backward(model, tape, np.ones(2))
    other, _ = _small(1)
    _, tape = forward(model, np.zeros(3))
    with pytest.raises(StaleTapeError):
        backward(other, tape, np.ones(2))


def test_mse_examples():
    loss, grad = mse_and_grad(np.array([1.0, 0.0]), np.zeros(2))
    assert loss == 0.5
    np.testing.assert_array_equal(grad, [1.0, 0.0])
    loss, grad = mse_and_grad(np.array([0.3, 0.2]), np.array([0.3, 0.2]))
    assert loss == 0.0 and not np.any(grad)


def test_mse_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    p, t = rng.standard_normal(24), rng.standard_normal(24)
    _, grad = mse_and_grad(p, t)
    h = 1e-6
    for i in range(24):
        e = np.zeros(24)
        e[i] = h
        fd = (mse_and_grad(p + e, t)[0] - mse_and_grad(p - e, t)[0]) / (2 * h)
        assert abs(grad[i] - fd) <= 1e-8 * max(1.0, abs(fd)) + 1e-10


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10),
       st.one_of(st.just(0.0), st.floats(1e-6, 5), st.floats(-5, -1e-6)))
def test_mse_is_nonnegative_and_zero_only_at_truth(values, shift):
    p = np.array(values)
    loss, _ = mse_and_grad(p, p + shift)
    assert loss >= 0
    assert (loss == 0) == (shift == 0)


def test_mse_length_mismatch():
    with pytest.raises(ValueError):
        mse_and_grad(np.zeros(3), np.zeros(4))


def test_adam_zero_gradient_without_decay_keeps_parameters():
    model, _ = _small()
    before = [p.copy() for p in model.params]
    adam_step(model, [np.zeros_like(p) for p in model.params], AdamState.for_model(model, decay=0.0))
    for a, b in zip(before, model.params):
        np.testing.assert_array_equal(a, b)


def test_adam_first_step_is_sign_like():
    model, _ = _small()
    before = [p.copy() for p in model.params]
    grads = [np.random.default_rng(5).standard_normal(p.shape) for p in model.params]
    adam_step(model, grads, AdamState.for_model(model, learning_rate=0.01, decay=0.0))
    for a, b, g in zip(before, model.params, grads):
        np.testing.assert_allclose(b - a, -0.01 * g / (np.abs(g) + 1e-8), atol=1e-15)


def test_adam_two_step_hand_trace():
    model = MLP((1, 1), [np.array([[1.0]])], [np.array([-0.5])])
    state = AdamState.for_model(model, learning_rate=0.1, decay=0.0)
    adam_step(model, [np.array([[0.5]]), np.array([-2.0])], state)
    adam_step(model, [np.array([[1.0]]), np.array([1.0])], state)
    # weight: g = 0.5 then 1.0
    m1, v1 = 0.05, 0.00025
    w1 = 1.0 - 0.1 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    m2, v2 = 0.9 * m1 + 0.1, 0.999 * v1 + 0.001
    w2 = w1 - 0.1 * (m2 / 0.19) / (math.sqrt(v2 / 0.001999) + 1e-8)
    # bias: g = -2 then 1
    m1, v1 = -0.2, 0.004
    b1 = -0.5 - 0.1 * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + 1e-8)
    m2, v2 = 0.9 * m1 + 0.1, 0.999 * v1 + 0.001
    b2 = b1 - 0.1 * (m2 / 0.19) / (math.sqrt(v2 / 0.001999) + 1e-8)
    assert model.weights[0][0, 0] == pytest.approx(w2, abs=1e-12)
    assert model.biases[0][0] == pytest.approx(b2, abs=1e-12)
    assert state.step == 2


def test_adam_weight_decay_is_decoupled():
    model = MLP((1, 1), [np.array([[2.0]])], [np.array([0.0])])
    adam_step(model, [np.zeros((1, 1)), np.zeros(1)], AdamState.for_model(model, learning_rate=0.1, decay=0.5))
    assert model.weights[0][0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_clamp_prediction():
    out, inside = clamp_prediction(np.array([10.0, -5.0, 110.0]), 100.0)
    np.testing.assert_array_equal(out, [10.0, 0.0, 100.0])
    np.testing.assert_array_equal(inside, [True, False, False])


def test_normalizer_round_trip():
    rng = np.random.default_rng(2)
    X = rng.uniform(-3, 40, size=(50, 6))
    norm = Normalizer.fit(X, 250.0)
    np.testing.assert_allclose(norm.features_inverse(norm.features(X)), X, atol=1e-12)
    scaled = norm.features(X)
    assert scaled.min() == pytest.approx(0.0) and scaled.max() == pytest.approx(1.0)
    y = rng.uniform(0, 250, 24)
    np.testing.assert_allclose(norm.target_inverse(norm.target(y)), y, atol=1e-12)


def test_normalizer_handles_constant_features():
    X = np.column_stack([np.zeros(10), np.arange(10.0)])
    norm = Normalizer.fit(X, 1.0)
    assert np.all(np.isfinite(norm.features(X)))


def test_normalizer_rejects_bad_scales():
    with pytest.raises(ValueError):
        Normalizer(np.zeros(2), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        Normalizer(np.ones(2), np.ones(2), 1.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    site = SitePredictor.create("pv0", rng.uniform(0, 1, (30, 72)), 400.0, 400.0, rng, hidden=(16, 16))
    x = rng.uniform(0, 1, 72)
    out, tape = site.forward(x)
    grads = backward(site.model, tape, rng.standard_normal(24))
    adam_step(site.model, grads, site.optimizer)
    path = save_checkpoint([site], tmp_path / "ckpt.json", meta={"seed": 0})
    (back,), meta = load_checkpoint(path)
    assert meta == {"seed": 0}
    for a, b in zip(site.model.params, back.model.params):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(site.optimizer.m + site.optimizer.v, back.optimizer.m + back.optimizer.v):
        np.testing.assert_array_equal(a, b)
    assert back.optimizer.step == 1
    np.testing.assert_array_equal(back.predict_kw(x), site.predict_kw(x))


def test_checkpoint_version_is_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 99, "sites": []}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
