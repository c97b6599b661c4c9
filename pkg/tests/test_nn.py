import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spokensem import nn
from spokensem.errors import LengthError, MaskError, NumericsError

from conftest import numeric_grad, rel_error
from oracles import attention_oracle, gru_loop_oracle


# ---------------------------------------------------------------- conv

@pytest.mark.parametrize("T,s,z,expected", [(6, 6, 3, 1), (98, 6, 3, 31)])
def test_conv_output_length(T, s, z, expected):
    k = np.zeros((s, 13, 4))
    out, _ = nn.conv1d_forward(np.zeros((T, 13)), k, np.zeros(4), z)
    assert out.shape == (expected, 4)


def test_conv_delta_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(12, 1))
    kernel = np.zeros((6, 1, 1))
    kernel[0, 0, 0] = 1.0
    out, _ = nn.conv1d_forward(x, kernel, np.zeros(1), 1)
    np.testing.assert_array_equal(out[:, 0], x[: len(out), 0])


def test_conv_too_short():
    with pytest.raises(LengthError):
        nn.conv1d_forward(np.zeros((5, 13)), np.zeros((6, 13, 2)), np.zeros(2), 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 40))
def test_conv_length_formula(s, z, extra):
    if z > s:
        z = s
    T = s + extra
    out, _ = nn.conv1d_forward(np.zeros((T, 2)), np.zeros((s, 2, 3)), np.zeros(3), z)
    assert len(out) == 1 + (T - s) // z


def test_conv_gradients(rng):
    x = rng.normal(size=(2, 11, 3))
    kernel = rng.normal(size=(4, 3, 5))
    bias = rng.normal(size=5)
    c = rng.normal(size=(2, 3, 5))

    def f():
        return float(np.sum(nn.conv1d_forward(x, kernel, bias, 3)[0] * c))

    _, cache = nn.conv1d_forward(x, kernel, bias, 3)
    dx, g = nn.conv1d_backward(c, cache)
    assert rel_error(dx, numeric_grad(f, x)) < 1e-8
    assert rel_error(g["kernel"], numeric_grad(f, kernel)) < 1e-8
    assert rel_error(g["bias"], numeric_grad(f, bias)) < 1e-8


# ---------------------------------------------------------------- GRU

def test_gru_zero_weights_stay_at_zero():
    p = {k: np.zeros_like(v) for k, v in
         nn.init_gru_stack(np.random.default_rng(0), "g", 3, 4, 2, np.float64).items()}
    out, _ = nn.gru_stack_forward(np.random.default_rng(1).normal(size=(7, 3)), nn.sub(p, "g"), 2)
    np.testing.assert_array_equal(out, 0.0)


def test_gru_causal():
    p = nn.sub(nn.init_gru_stack(np.random.default_rng(0), "g", 3, 4, 1, np.float64), "g")
    x = np.random.default_rng(1).normal(size=(2, 3))
    first, _ = nn.gru_stack_forward(x[:1], p, 1)
    y = x.copy()
    y[1] += 5.0
    a, _ = nn.gru_stack_forward(x, p, 1)
    b, _ = nn.gru_stack_forward(y, p, 1)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(first[0], a[0])


def test_gru_matches_loop_oracle(rng):
    p = {k: rng.normal(0, 0.5, v.shape) for k, v in
         nn.init_gru_layer(rng, "l0", 3, 4, np.float64).items()}
    x = rng.normal(size=(5, 3))
    out, _ = nn.gru_stack_forward(x, p, 1)
    np.testing.assert_allclose(out, gru_loop_oracle(x, nn.sub(p, "l0"), 4), atol=1e-10, rtol=0)


def test_gru_cell_matches_layer(rng):
    p = {k: rng.normal(0, 0.5, v.shape) for k, v in nn.init_gru_layer(rng, "x", 3, 4, np.float64).items()}
    p = nn.sub(p, "x")
    x = rng.normal(size=(2, 1, 3))
    h0 = rng.normal(size=(2, 4))
    out, _ = nn.gru_layer_forward(x, p, h0=h0)
    np.testing.assert_allclose(out[:, 0], nn.gru_cell(x[:, 0], h0, p), atol=1e-14)


def test_gru_masked_gradients(rng):
    p = nn.sub(nn.init_gru_stack(rng, "g", 3, 4, 2, np.float64), "g")
    for k in p:
        p[k][...] = rng.normal(0, 0.5, p[k].shape)
    x = rng.normal(size=(3, 6, 3))
    mask = nn.lengths_to_mask([6, 4, 1], 6)
    c = rng.normal(size=(3, 6, 4)) * mask[:, :, None]

    def f():
        return float(np.sum(nn.gru_stack_forward(x, p, 2, mask)[0] * c))

    _, cache = nn.gru_stack_forward(x, p, 2, mask)
    dx, g = nn.gru_stack_backward(c, cache)
    assert rel_error(dx, numeric_grad(f, x)) < 1e-7
    for name in g:
        assert rel_error(g[name], numeric_grad(f, p[name])) < 1e-7, name


def test_gru_h0_gradient(rng):
    p = nn.sub(nn.init_gru_layer(rng, "g", 2, 3, np.float64), "g")
    x = rng.normal(size=(2, 4, 2))
    h0 = rng.normal(size=(2, 3))
    c = rng.normal(size=(2, 4, 3))

    def f():
        return float(np.sum(nn.gru_layer_forward(x, p, h0=h0)[0] * c))

    _, cache = nn.gru_layer_forward(x, p, h0=h0)
    _, dh0, _ = nn.gru_layer_backward(c, cache)
    assert rel_error(dh0, numeric_grad(f, h0)) < 1e-8


def test_masked_steps_do_not_change_valid_states(rng):
    p = nn.sub(nn.init_gru_stack(rng, "g", 3, 4, 2, np.float64), "g")
    x = rng.normal(size=(1, 8, 3))
    short, _ = nn.gru_stack_forward(x[:, :5], p, 2)
    y = x.copy()
    y[:, 5:] = 99.0
    padded, _ = nn.gru_stack_forward(y, p, 2, nn.lengths_to_mask([5], 8))
    np.testing.assert_array_equal(padded[:, :5], short)


# ---------------------------------------------------------------- attention

def test_attention_singleton(rng):
    x = rng.normal(size=(1, 3))
    out, cache = nn.attention_forward(x, rng.normal(size=(2, 3)), rng.normal(size=2))
    np.testing.assert_array_equal(cache["alpha"], [[1.0]])
    np.testing.assert_array_equal(out, x[0])


def test_attention_identical_rows(rng):
    v = rng.normal(size=3)
    out, _ = nn.attention_forward(np.tile(v, (6, 1)), rng.normal(size=(5, 3)), rng.normal(size=5))
    np.testing.assert_allclose(out, v, rtol=1e-15)


def test_attention_matches_direct_formula(rng):
    x = rng.normal(size=(7, 3))
    W = rng.normal(size=(4, 3))
    U = rng.normal(size=4)
    out, cache = nn.attention_forward(x, W, U)
    ref, alpha = attention_oracle(x, W, U)
    np.testing.assert_allclose(out, ref, atol=1e-10)
    np.testing.assert_allclose(cache["alpha"][0], alpha, atol=1e-10)


def test_attention_mask(rng):
    x = rng.normal(size=(2, 5, 3))
    mask = nn.lengths_to_mask([5, 2], 5)
    _, cache = nn.attention_forward(x, rng.normal(size=(4, 3)), rng.normal(size=4), mask)
    alpha = cache["alpha"]
    assert np.all(alpha >= 0)
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(alpha[1, 2:], 0.0)
    with pytest.raises(MaskError):
        nn.attention_forward(x, rng.normal(size=(4, 3)), rng.normal(size=4), np.zeros((2, 5)))


def test_attention_gradients(rng):
    x = rng.normal(size=(2, 6, 3))
    W = rng.normal(size=(4, 3))
    U = rng.normal(size=4)
    mask = nn.lengths_to_mask([6, 3], 6)
    c = rng.normal(size=(2, 3))

    def f():
        return float(np.sum(nn.attention_forward(x, W, U, mask)[0] * c))

    _, cache = nn.attention_forward(x, W, U, mask)
    dx, g = nn.attention_backward(c, cache)
    assert rel_error(dx, numeric_grad(f, x)) < 1e-8
    assert rel_error(g["W"], numeric_grad(f, W)) < 1e-8
    assert rel_error(g["U"], numeric_grad(f, U)) < 1e-8


# ---------------------------------------------------------------- small ops

def test_l2_normalize_gradient(rng):
    x = rng.normal(size=(3, 4))
    c = rng.normal(size=(3, 4))
    y, cache = nn.l2_normalize_forward(x)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0)
    dx = nn.l2_normalize_backward(c, cache)
    assert rel_error(dx, numeric_grad(lambda: float(np.sum(nn.l2_normalize_forward(x)[0] * c)), x)) < 1e-8
    with pytest.raises(NumericsError):
        nn.l2_normalize_forward(np.zeros((1, 3)))


def test_grad_reverse_forward_is_identity(rng):
    v = rng.normal(size=5)
    out, _ = nn.grad_reverse_forward(v, 0.7)
    assert out is v or np.array_equal(out, v)


def test_grad_reverse_flips_sign(rng):
    # f(g(x)) with g = reversal: analytic backward must equal -lam * d f/dx
    x = rng.normal(size=4)
    w = rng.normal(size=4)

    def f():
        return float(np.sum(np.tanh(x) * w))

    plain = numeric_grad(f, x)
    upstream = (1 - np.tanh(x) ** 2) * w
    np.testing.assert_allclose(nn.grad_reverse_backward(upstream, 1.0), -plain, atol=1e-8)
    np.testing.assert_array_equal(nn.grad_reverse_backward(upstream, 0.0), 0.0)


def test_softmax_cross_entropy_uniform():
    loss, d = nn.softmax_cross_entropy(np.zeros((3, 5)), np.array([0, 1, 4]))
    assert loss == pytest.approx(math.log(5))
    np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-15)


# ---------------------------------------------------------------- optimisation

def test_quadratic_gradient_is_parameter():
    p = np.random.default_rng(0).normal(size=6)
    g = numeric_grad(lambda: 0.5 * float(p @ p), p)
    np.testing.assert_allclose(g, p, atol=1e-8)


def test_clip_rescales_to_max_norm():
    grads = {"a": np.array([2.0, 0.0]), "b": np.array([[0.0, 2.0 * math.sqrt(3)]])}
    clipped, norm = nn.clip_gradients(grads, 2.0)
    assert norm == pytest.approx(4.0)
    np.testing.assert_allclose(clipped["a"], [1.0, 0.0])
    np.testing.assert_allclose(clipped["b"], [[0.0, math.sqrt(3)]])
    assert nn.global_norm(clipped) == pytest.approx(2.0)


def test_clip_noop_below_threshold():
    grads = {"a": np.array([0.3, -0.4])}
    clipped, _ = nn.clip_gradients(grads, 2.0)
    assert clipped is grads


def test_clip_rejects_nan():
    with pytest.raises(NumericsError):
        nn.clip_gradients({"a": np.array([np.nan])})


def test_adam_zero_gradient_no_change():
    params = {"w": np.array([1.0, -2.0])}
    nn.Adam(lr=0.1).step(params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    nn.Adam(lr=0.01).step(params, {"w": np.array([3.0, -0.5, 1e-3])})
    np.testing.assert_allclose(params["w"], [0.99, -1.99, 0.49], atol=1e-7)


def test_adam_bias_correction_second_step():
    opt = nn.Adam(lr=0.1, beta1=0.9, beta2=0.999, eps=0.0)
    params = {"w": np.array([0.0])}
    opt.step(params, {"w": np.array([1.0])})
    opt.step(params, {"w": np.array([3.0])})
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    expected = -0.1 - 0.1 * (m / (1 - 0.81)) / math.sqrt(v / (1 - 0.999**2))
    np.testing.assert_allclose(params["w"], [expected], rtol=1e-12)


def test_nonfinite_loss_raises():
    with pytest.raises(NumericsError):
        nn.check_finite_loss(float("inf"))
