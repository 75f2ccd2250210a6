import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvsr import Tensor, backward, no_grad
from deskvsr.errors import BackwardError, ShapeMismatchError
from deskvsr.gradcheck import check
from deskvsr.tensor import (
    add,
    concat,
    concat_channels,
    mean,
    mul,
    permute,
    reshape,
    scalar_mul,
    slice_axis,
    sub,
    sum as tsum,
)


def leaf(x, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def test_add_values():
    np.testing.assert_array_equal(add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_concat_channels_shape():
    a = Tensor(np.zeros((1, 3, 4, 4)))
    b = Tensor(np.zeros((1, 5, 4, 4)))
    assert concat_channels([a, b]).shape == (1, 8, 4, 4)


def test_sum_backward_is_ones():
    x = leaf(np.arange(6.0).reshape(2, 3))
    backward(tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_gradient():
    x = leaf([3.0])
    backward(tsum(x * x))
    np.testing.assert_array_equal(x.grad, [6.0])


def test_mean_gradient():
    x = leaf(np.ones(4))
    backward(mean(x))
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_fan_out_accumulates():
    x = leaf([1.5, -2.0])
    backward(tsum(x + x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_diamond_graph_accumulates():
    x = leaf([2.0])
    a = scalar_mul(x, 3.0)
    b = x * x
    backward(tsum(a * b))  # 3 x^3 -> 9 x^2
    np.testing.assert_allclose(x.grad, [36.0])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatchError) as exc:
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)


def test_concat_mismatch():
    with pytest.raises(ShapeMismatchError):
        concat([Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 3)))], axis=1)


def test_backward_non_scalar_root():
    x = leaf([1.0, 2.0])
    with pytest.raises(BackwardError):
        backward(x * x)


def test_backward_detached():
    x = leaf([1.0])
    y = (x * x).detach()
    with pytest.raises(BackwardError):
        backward(y)


def test_graph_is_consumed():
    x = leaf([1.0])
    y = tsum(x * x)
    backward(y)
    with pytest.raises(BackwardError):
        backward(y)


def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = x * x
    assert not y.requires_grad and y.is_leaf


def test_grad_shape_matches_data():
    x = leaf(np.ones((2, 3, 4)))
    backward(mean(permute(reshape(x, (6, 4)), (1, 0))))
    assert x.grad.shape == x.shape


def test_extents_must_be_positive():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_scalar_promoted_to_shape_one():
    assert Tensor(2.0).shape == (1,)


def test_int_input_becomes_float32():
    assert Tensor([1, 2]).dtype == np.float32


def test_gradient_keeps_dtype():
    x = leaf(np.ones(3), np.float32)
    backward(tsum(x * x))
    assert x.grad.dtype == np.float32


def test_deterministic_repeat():
    def run():
        r = np.random.default_rng(7)
        x = leaf(r.standard_normal((3, 4)))
        w = leaf(r.standard_normal((3, 4)))
        backward(mean(mul(x, w) - scalar_mul(x, 0.5)))
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(tuple)


def _binary(op):
    return {"add": add, "sub": sub, "mul": mul}[op]


@settings(max_examples=25, deadline=None)
@given(shape=shapes, op=st.sampled_from(["add", "sub", "mul"]), seed=st.integers(0, 10_000))
def test_elementwise_gradients_f64(shape, op, seed):
    r = np.random.default_rng(seed)
    res = check(_binary(op), [r.standard_normal(shape), r.standard_normal(shape)], op, r)
    assert res.passed(1e-4), res


@settings(max_examples=25, deadline=None)
@given(shape=shapes, op=st.sampled_from(["add", "sub", "mul"]), seed=st.integers(0, 10_000))
def test_elementwise_gradients_f32(shape, op, seed):
    r = np.random.default_rng(seed)
    args = [r.standard_normal(shape).astype(np.float32) for _ in range(2)]
    res = check(_binary(op), args, op, r, reference_dtype=np.float64)
    assert res.passed(1e-2), res


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(1, 3), c1=st.integers(1, 4), c2=st.integers(1, 4), h=st.integers(1, 4), seed=st.integers(0, 10_000)
)
def test_structural_gradients_f64(n, c1, c2, h, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal((n, c1, h, 2)), r.standard_normal((n, c2, h, 2))

    def fn(x, y):
        z = concat([x, y], axis=1)
        z = slice_axis(z, 1, 0, c1 + c2 - 1) if c1 + c2 > 1 else z
        return permute(reshape(z, (n, -1)), (1, 0))

    assert check(fn, [a, b], "concat-slice-reshape", r).passed(1e-4)


@settings(max_examples=20, deadline=None)
@given(shape=shapes, seed=st.integers(0, 10_000))
def test_reduction_gradients(shape, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(shape)
    assert check(lambda t: mean(t * t), [x], "mean", r).passed(1e-4)
    assert check(lambda t: tsum(scalar_mul(t, 2.5)), [x], "sum", r).passed(1e-4)
