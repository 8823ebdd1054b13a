import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from macensemble import _fallback, kernel
from macensemble.errors import DomainError, ShapeError


def loop_matmul(a, b):
    """Scalar triple loop, summing k in ascending order."""
    n, kk = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(kk):
                acc = acc + float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def matrix_pair(draw):
    n, k, m = (draw(st.integers(1, 7)) for _ in range(3))
    a = draw(hnp.arrays(np.float64, (n, k), elements=finite))
    b = draw(hnp.arrays(np.float64, (k, m), elements=finite))
    return a, b


@given(matrix_pair())
def test_matmul_matches_scalar_loop_bitwise(pair):
    a, b = pair
    expected = loop_matmul(a, b)
    previous = kernel.get_backend()
    try:
        for name in kernel.available_backends():
            kernel.set_backend(name)
            np.testing.assert_array_equal(kernel.matmul(a, b), expected)
            np.testing.assert_array_equal(kernel.matmul_tn(a.T.copy(), b), expected)
    finally:
        kernel.set_backend(previous)


def test_matmul_known_values(backend):
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(kernel.matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])


def test_accumulation_order_is_left_to_right(backend):
    # (1e16 + 1) - 1e16 is 0 in double precision, 1e16 - 1e16 + 1 is 1
    a = np.array([[1e16, 1.0, -1e16]])
    b = np.ones((3, 1))
    assert kernel.matmul(a, b)[0, 0] == ((1e16 + 1.0) - 1e16)


@pytest.mark.skipif("compiled" not in kernel.available_backends(), reason="extension not built")
def test_compiled_and_fallback_bit_identical_large(rng):
    # spans several k-blocks of the compiled kernel
    a = rng.standard_normal((37, 600))
    b = rng.standard_normal((600, 53))
    previous = kernel.get_backend()
    try:
        kernel.set_backend("compiled")
        c1 = kernel.matmul(a, b)
        t1 = kernel.matmul_tn(b, a.T.copy())
        kernel.set_backend("python")
        c2 = kernel.matmul(a, b)
        t2 = kernel.matmul_tn(b, a.T.copy())
    finally:
        kernel.set_backend(previous)
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_array_equal(t1, t2)
    np.testing.assert_allclose(c1, a @ b, rtol=1e-12, atol=1e-10)


def test_matmul_empty_inner_dimension(backend):
    out = kernel.matmul(np.zeros((3, 0)), np.zeros((0, 2)))
    np.testing.assert_array_equal(out, np.zeros((3, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as info:
        kernel.matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    assert "(2, 3)" in str(info.value) and "(4, 5)" in str(info.value)
    assert info.value.shapes == ((2, 3), (4, 5))


def test_matmul_rejects_non_matrix():
    with pytest.raises(ShapeError):
        kernel.matmul(np.zeros(3), np.zeros((3, 1)))


def test_fallback_rejects_mismatch_directly():
    with pytest.raises(ValueError):
        _fallback.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_relu_clamps_negative_zero(backend):
    x = np.array([[-1.0, -0.0, 0.0, 2.5]])
    out = kernel.relu(x)
    np.testing.assert_array_equal(out, [[0.0, 0.0, 0.0, 2.5]])
    assert not np.signbit(out).any()
    assert x[0, 0] == -1.0  # input untouched


def test_sigmoid_extremes_do_not_overflow():
    with np.errstate(over="raise"):
        s = kernel.sigmoid(np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0]))
    assert s[0] == 0.0 and s[-1] == 1.0 and s[2] == 0.5
    assert np.all(np.diff(s) >= 0)


@given(st.floats(-700, 700))
def test_sigmoid_matches_math(x):
    expected = 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))
    assert kernel.sigmoid(np.array([x]))[0] == pytest.approx(expected, rel=1e-15, abs=1e-300)


def test_elementwise_binary_and_unary():
    a = np.array([[1.0, 4.0]])
    b = np.array([[2.0, 0.5]])
    np.testing.assert_array_equal(kernel.elementwise("add", a, b), [[3.0, 4.5]])
    np.testing.assert_array_equal(kernel.elementwise("sub", a, b), [[-1.0, 3.5]])
    np.testing.assert_array_equal(kernel.elementwise("mul", a, b), [[2.0, 2.0]])
    np.testing.assert_allclose(kernel.elementwise("ln", a), [[0.0, math.log(4.0)]])
    np.testing.assert_allclose(kernel.elementwise("exp", a), np.exp(a))
    np.testing.assert_array_equal(kernel.elementwise("reciprocal", a), [[1.0, 0.25]])


def test_elementwise_ln_domain_error_reports_index():
    with pytest.raises(DomainError) as info:
        kernel.elementwise("ln", np.array([[1.0, 2.0], [0.5, 0.0]]))
    assert info.value.index == (1, 1)
    assert info.value.value == 0.0


def test_elementwise_reciprocal_of_zero():
    with pytest.raises(DomainError) as info:
        kernel.elementwise("reciprocal", np.array([[0.0]]))
    assert info.value.index == (0, 0)


def test_elementwise_bad_arguments():
    a = np.ones((2, 2))
    with pytest.raises(ShapeError):
        kernel.elementwise("add", a, np.ones((2, 3)))
    with pytest.raises(ValueError):
        kernel.elementwise("add", a)
    with pytest.raises(ValueError):
        kernel.elementwise("exp", a, a)
    with pytest.raises(ValueError):
        kernel.elementwise("tanh", a)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernel.set_backend("gpu")
