import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swe_attention import autodiff as ad
from swe_attention.autodiff import GraphError, NondeterminismError, ShapeError, Tensor


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(T(np.eye(2)), T(m)).data, m)


def test_matmul_hand_case():
    out = ad.matmul(T([[1, 2], [3, 4]]), T([[5], [6]]))
    assert np.array_equal(out.data, [[17.0], [39.0]])


def test_matmul_inner_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(T(np.zeros((2, 3))), T(np.zeros((2, 3))))


def test_matmul_backward_rule(rng):
    a, b = T(rng.normal(size=(3, 4)), True), T(rng.normal(size=(4, 2)), True)
    g = rng.normal(size=(3, 2))
    ad.backward(ad.sum(ad.mul(ad.matmul(a, b), T(g))))
    assert np.allclose(a.grad, g @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ g)


def test_batched_matmul_requires_matching_leading_dims():
    with pytest.raises(ShapeError):
        ad.matmul(T(np.zeros((2, 3, 4))), T(np.zeros((3, 4, 5))))


# ---------------------------------------------------------------- elementwise

def test_gelu_relu_softmax_examples():
    assert ad.elementwise("gelu", T([0.0])).data[0] == 0.0
    assert ad.elementwise("relu", T([-1.5])).data[0] == 0.0
    assert np.allclose(ad.elementwise("softmax_lastdim", T([0.0, 0.0, 0.0])).data, 1 / 3,
                       atol=1e-15)


def test_gelu_matches_erf_definition():
    from scipy.special import erf
    x = np.linspace(-4, 4, 41)
    assert np.allclose(ad.gelu(T(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)


def test_binary_shape_mismatch_is_an_error():
    for kind in ("add", "sub", "mul"):
        with pytest.raises(ShapeError):
            ad.elementwise(kind, T(np.zeros((2, 3))), T(np.zeros(3)))


def test_scale_is_the_only_broadcast():
    out = ad.elementwise("scale", T([[1.0, 2.0]]), 3.0)
    assert np.array_equal(out.data, [[3.0, 6.0]])


def test_unknown_kind():
    with pytest.raises(ValueError):
        ad.elementwise("cube", T([1.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one_and_positive(x):
    out = ad.softmax_lastdim(T(x)).data
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(out > 0)


def test_softmax_is_stable_for_large_logits():
    out = ad.softmax_lastdim(T([1000.0, 1000.0])).data
    assert np.array_equal(out, [0.5, 0.5])


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = T([1.0, 2.0, 3.0], True)
    grads = ad.backward(ad.sum(x))
    assert np.array_equal(grads[x], [1.0, 1.0, 1.0])


def test_backward_square():
    x = T([1.0, 2.0], True)
    ad.backward(ad.sum(ad.mul(x, x)))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_twice_is_an_error():
    x = T([1.0, 2.0], True)
    loss = ad.sum(ad.mul(x, x))
    ad.backward(loss)
    with pytest.raises(GraphError):
        ad.backward(loss)


def test_backward_non_scalar_is_an_error():
    with pytest.raises(GraphError):
        ad.backward(ad.mul(T([1.0, 2.0], True), T([1.0, 1.0])))


def test_leaf_gradients_accumulate_across_graphs_until_reset():
    x = T([1.0, 2.0], True)
    ad.backward(ad.sum(x))
    ad.backward(ad.sum(x))
    assert np.array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradients_add():
    x = T([3.0], True)
    y = ad.mul(x, x)
    ad.backward(ad.sum(ad.add(y, y)))
    assert np.array_equal(x.grad, [12.0])


def test_every_leaf_gradient_matches_shape(rng):
    a, v = T(rng.normal(size=(3, 4)), True), T(rng.normal(size=4), True)
    ad.backward(ad.sum(ad.layer_norm(ad.add_rowvec(a, v))))
    assert a.grad.shape == a.shape and v.grad.shape == v.shape


def test_no_grad_builds_no_graph():
    x = T([1.0], True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_getitem_backward_scatters():
    x = T([1.0, 2.0, 3.0], True)
    ad.backward(ad.sum(x[np.array([0, 0, 2])]))
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


# ---------------------------------------------------------------- grad_check

def test_grad_check_square():
    x = T(np.random.default_rng(0).uniform(-1, 1, 6))
    assert ad.grad_check(lambda t: ad.sum(ad.mul(t, t)), [x], 1e-5) < 1e-6


def test_grad_check_constant_function():
    x = T([1.0, 2.0])
    assert ad.grad_check(lambda t: Tensor(np.array(3.0)), [x]) == 0.0


def test_grad_check_detects_nondeterminism():
    rng = np.random.default_rng(0)
    x = T([1.0, 2.0])
    with pytest.raises(NondeterminismError):
        ad.grad_check(lambda t: ad.sum(ad.scale(t, rng.random())), [x])


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.sum(t), [T([1.0])], eps=0.0)


@pytest.mark.parametrize("kind", ["gelu", "relu", "softmax_lastdim", "tanh", "sigmoid"])
def test_unary_gradients(kind, rng):
    x = T(rng.uniform(-1, 1, (3, 4)))
    w = T(rng.uniform(-1, 1, (3, 4)))
    assert ad.grad_check(lambda t: ad.sum(ad.mul(ad.elementwise(kind, t), w)), [x]) < 1e-4


def test_forward_is_bit_identical(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    first = ad.softmax_lastdim(ad.matmul(T(a), T(b))).data
    second = ad.softmax_lastdim(ad.matmul(T(a), T(b))).data
    assert np.array_equal(first, second)


def test_relu_keeps_nan_visible():
    out = ad.relu(T([np.nan, -1.0, 2.0])).data
    assert np.isnan(out[0]) and out[1] == 0.0 and out[2] == 2.0
