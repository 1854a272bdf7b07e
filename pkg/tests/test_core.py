import numpy as np
import pytest

from grouprank.core import (DivergenceError, OptimizerConfig, ParamStore, ShapeError, adamw_step,
                            affine, affine_backward, finite_difference_gradient, log_sigmoid,
                            max_relative_error, relu, relu_backward, sigmoid, sigmoid_backward,
                            softplus)


def test_affine_matches_matmul(rng):
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    np.testing.assert_allclose(affine(x, w, b), x @ w + b, rtol=0, atol=1e-15)


def test_affine_shape_errors(rng):
    with pytest.raises(ShapeError):
        affine(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))
    with pytest.raises(ShapeError):
        affine(np.zeros((2, 3)), np.zeros((3, 5)), np.zeros(4))


def test_affine_backward_against_finite_differences(rng):
    x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
    dout = rng.normal(size=(4, 2))
    gw, gb = np.zeros_like(w), np.zeros_like(b)
    dx = affine_backward(x, w, dout, gw, gb)

    def f(p):
        return float(np.sum(affine(p["x"], p["w"], p["b"]) * dout))

    ps = ParamStore()
    ps.add("x", x), ps.add("w", w), ps.add("b", b)
    num = finite_difference_gradient(f, ps)
    assert max_relative_error(dx, num["x"]) < 1e-8
    assert max_relative_error(gw, num["w"]) < 1e-8
    assert max_relative_error(gb, num["b"]) < 1e-8


def test_affine_backward_accumulates(rng):
    x, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    dout = rng.normal(size=(4, 2))
    gw = np.ones_like(w)
    affine_backward(x, w, dout, gw)
    np.testing.assert_allclose(gw, 1.0 + x.T @ dout)


def test_sigmoid_extremes():
    v = sigmoid(np.array([-745.0, 0.0, 745.0, 40.0]))
    assert 0.0 < v[0] <= 1e-300
    assert v[1] == 0.5
    assert v[2] == 1.0
    assert np.all(np.isfinite(v))


def test_sigmoid_backward_and_logs(rng):
    s = rng.normal(size=10) * 5
    np.testing.assert_allclose(sigmoid_backward(s, np.ones(10)), sigmoid(s) * (1 - sigmoid(s)))
    np.testing.assert_allclose(log_sigmoid(s), np.log(sigmoid(s)), rtol=1e-12)
    assert np.isfinite(log_sigmoid(np.array([-1000.0]))[0])
    np.testing.assert_allclose(softplus(np.array([0.0, 1000.0])), [np.log(2.0), 1000.0])


def test_relu_backward_masks_nonpositive():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(relu(x), [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(x, np.ones(3)), [0, 0, 1])


def test_adamw_first_step_is_lr_times_sign():
    ps = ParamStore()
    ps.add("w", np.array([1.0, -2.0, 3.0]))
    ps.grad("w")[:] = [0.5, -4.0, 1e-3]
    adamw_step(ps, OptimizerConfig(learning_rate=0.1))
    # bias-corrected first step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(ps["w"], [0.9, -1.9, 2.9], atol=1e-6)
    assert ps.step_count == 1
    assert np.all(ps.grad("w") == 0)


def test_adamw_decoupled_weight_decay():
    ps = ParamStore()
    ps.add("w", np.array([2.0]))
    adamw_step(ps, OptimizerConfig(learning_rate=0.1, weight_decay=0.5))
    # zero gradient: only the decay acts, w <- w (1 - lr wd)
    np.testing.assert_allclose(ps["w"], [2.0 * (1 - 0.05)])


def test_adamw_rejects_nonfinite_gradient():
    ps = ParamStore()
    ps.add("layer.W", np.zeros(2))
    ps.grad("layer.W")[0] = np.nan
    with pytest.raises(DivergenceError, match="layer.W"):
        adamw_step(ps, OptimizerConfig())


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0)
    with pytest.raises(ValueError):
        OptimizerConfig(beta1=1.0)


def test_param_store_copy_is_deep():
    ps = ParamStore()
    ps.add("a", np.zeros(3))
    c = ps.copy()
    c["a"][0] = 5
    assert ps["a"][0] == 0
    with pytest.raises(KeyError):
        ps.add("a", np.zeros(1))
