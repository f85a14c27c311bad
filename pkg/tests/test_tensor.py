import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcecnn.errors import AxisError, ShapeError
from vcecnn.tensor import Tensor, elementwise, flat_index, matmul, ones, reduce, reshape, zeros


def test_zeros():
    assert zeros([2, 2]).tolist() == [[0, 0], [0, 0]]
    assert zeros([1]).tolist() == [0]
    assert zeros([3, 1, 2]).data.size == 6


@pytest.mark.parametrize("shape", [[], [0], [2, -1]])
def test_zeros_rejects_bad_shape(shape):
    with pytest.raises(ShapeError):
        zeros(shape)


def test_dtypes():
    assert zeros([2]).dtype == np.float32
    assert zeros([2], np.float64).dtype == np.float64
    with pytest.raises(TypeError):
        zeros([2], np.int32)


def test_row_major_layout():
    t = Tensor(np.arange(24).reshape(2, 3, 4))
    assert t.strides == (12, 4, 1)
    assert t.data[flat_index(t.shape, (1, 2, 3))] == t.array[1, 2, 3]


def test_matmul_examples():
    a = Tensor([[1, 2], [3, 4]])
    assert matmul(a, Tensor(np.eye(2))).tolist() == [[1, 2], [3, 4]]
    assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).tolist() == [[11]]
    assert matmul(zeros([2, 3]), ones([3, 2])).tolist() == [[0, 0], [0, 0]]


def test_matmul_errors():
    with pytest.raises(ShapeError):
        matmul(zeros([2, 3]), zeros([2, 3]))
    with pytest.raises(ShapeError):
        matmul(zeros([2]), zeros([2, 3]))
    with pytest.raises(TypeError):
        matmul(zeros([2, 2]), zeros([2, 2], np.float64))


def test_elementwise_examples():
    assert elementwise(Tensor([1, 2]), Tensor([3, 4]), "add").tolist() == [4, 6]
    assert elementwise(Tensor([[2, 2]]), Tensor([0, 1]), "mul").tolist() == [[0, 2]]
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert np.array_equal((x - x).array, np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        elementwise(zeros([2, 3]), zeros([2]), "add")


def test_reduce_examples():
    assert reduce(Tensor([[1, 5], [3, 2]]), 1, "max").tolist() == [5, 3]
    assert reduce(ones([2, 3]), 0, "sum").tolist() == [2, 2, 2]
    assert reduce(Tensor([0.1, 0.1]), 0, "argmax").tolist() == [0]
    assert reduce(Tensor([[1, 3], [5, 7]]), 0, "mean").tolist() == [3, 5]
    with pytest.raises(AxisError):
        reduce(ones([2, 3]), 2, "sum")


def test_argmax_ties_pick_lowest_index():
    t = Tensor([[1, 4, 4, 0], [2, 2, 2, 2]])
    assert reduce(t, 1, "argmax").tolist() == [1, 0]


def test_reshape_examples():
    assert reshape(Tensor([[1, 2], [3, 4]]), [4]).tolist() == [1, 2, 3, 4]
    assert reshape(Tensor([1, 2, 3, 4]), [2, 2]).tolist() == [[1, 2], [3, 4]]
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(reshape(x, x.shape).array, x.array)
    with pytest.raises(ShapeError):
        reshape(x, [4])


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


@given(shapes)
@settings(max_examples=50, deadline=None)
def test_reshape_round_trip(shape):
    n = int(np.prod(shape))
    x = Tensor(np.arange(n, dtype=np.float64).reshape(shape), np.float64)
    flat = reshape(x, [n])
    assert np.array_equal(reshape(flat, shape).array, x.array)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-10)])
def test_matmul_associative(dtype, tol):
    rs = np.random.default_rng(3)
    for _ in range(20):
        m, k, l, n = rs.integers(1, 12, size=4)
        a = Tensor(rs.uniform(-1, 1, (m, k)), dtype)
        b = Tensor(rs.uniform(-1, 1, (k, l)), dtype)
        c = Tensor(rs.uniform(-1, 1, (l, n)), dtype)
        left = matmul(matmul(a, b), c).array.astype(np.float64)
        right = matmul(a, matmul(b, c)).array.astype(np.float64)
        scale = np.abs(a.array) @ np.abs(b.array) @ np.abs(c.array)
        assert np.all(np.abs(left - right) <= tol * np.maximum(scale, 1.0))


@given(shapes)
@settings(max_examples=30, deadline=None)
def test_full_reduction_matches_sequential_sum(shape):
    rs = np.random.default_rng(len(shape))
    x = Tensor(rs.uniform(0, 1, shape), np.float64)
    total = reduce(x, 0, "sum")
    while total.rank > 1:
        total = reduce(total, 0, "sum")
    total = reduce(total, 0, "sum") if total.size > 1 else total
    sequential = 0.0
    for v in x.data:
        sequential += float(v)
    assert abs(total.array.item() - sequential) <= 1e-6 * max(abs(sequential), 1.0)
