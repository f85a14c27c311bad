"""Dense row-major tensors.

A :class:`Tensor` owns one C-contiguous numpy buffer of dtype float32 or
float64. There are no views or strided aliases: every operation returns a
fresh, contiguous tensor. Broadcasting is limited to adding a rank-1 tensor
along the last axis (the bias-add pattern).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import AxisError, ShapeError

FLOAT32 = np.dtype(np.float32)
FLOAT64 = np.dtype(np.float64)
DTYPES = (FLOAT32, FLOAT64)


def _check_dtype(dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    if dtype not in DTYPES:
        raise TypeError(f"unsupported dtype {dtype}; expected float32 or float64")
    return dtype


def _check_shape(shape: Iterable[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: every dimension must be >= 1")
    return shape


class Tensor:
    """An n-dimensional array with a flat row-major buffer."""

    __slots__ = ("array",)

    def __init__(self, values, dtype=FLOAT32):
        dtype = _check_dtype(dtype)
        array = np.ascontiguousarray(np.asarray(values, dtype=dtype))
        if any(d < 1 for d in array.shape):
            raise ShapeError(f"invalid shape {array.shape}: every dimension must be >= 1")
        self.array = array

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Adopt an existing ndarray without copying when it is already contiguous."""
        out = cls.__new__(cls)
        _check_dtype(array.dtype)
        out.array = np.ascontiguousarray(array)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def dtype(self) -> np.dtype:
        return self.array.dtype

    @property
    def rank(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> np.ndarray:
        """The flat row-major buffer (a 1-D view of the storage)."""
        return self.array.reshape(-1)

    @property
    def strides(self) -> tuple[int, ...]:
        """Element strides implied by the shape."""
        return row_major_strides(self.shape)

    def tolist(self):
        return self.array.tolist()

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.array, dtype=dtype)

    def copy(self) -> "Tensor":
        return Tensor.wrap(self.array.copy())

    def __getitem__(self, index):
        return self.array[index]

    def __len__(self) -> int:
        return self.shape[0] if self.shape else 1

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return elementwise(self, other, "add")

    def __sub__(self, other: "Tensor") -> "Tensor":
        return elementwise(self, other, "sub")

    def __mul__(self, other: "Tensor") -> "Tensor":
        return elementwise(self, other, "mul")

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def row_major_strides(shape: Sequence[int]) -> tuple[int, ...]:
    strides = []
    step = 1
    for d in reversed(shape):
        strides.append(step)
        step *= d
    return tuple(reversed(strides))


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    return sum(i * s for i, s in zip(index, row_major_strides(shape)))


def zeros(shape: Sequence[int], dtype=FLOAT32) -> Tensor:
    if len(shape) == 0:
        raise ShapeError("zeros needs at least one dimension")
    return Tensor.wrap(np.zeros(_check_shape(shape), dtype=_check_dtype(dtype)))


def ones(shape: Sequence[int], dtype=FLOAT32) -> Tensor:
    if len(shape) == 0:
        raise ShapeError("ones needs at least one dimension")
    return Tensor.wrap(np.ones(_check_shape(shape), dtype=_check_dtype(dtype)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    return Tensor.wrap(a.array @ b.array)


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if a.shape != b.shape and not (b.rank == 1 and a.rank >= 1 and a.shape[-1] == b.shape[0]):
        raise ShapeError(f"cannot combine shapes {a.shape} and {b.shape}")
    return Tensor.wrap(fn(a.array, b.array))


def reduce(a: Tensor, axis: int, op: str) -> Tensor:
    """Reduce along one axis with sum, mean, max or argmax.

    ``argmax`` returns the lowest index among tied maxima (numpy's rule) and
    yields an integer-valued tensor in the input's float dtype. Reducing a
    rank-1 tensor gives a rank-0 scalar.
    """
    if not 0 <= axis < a.rank:
        raise AxisError(f"axis {axis} out of range for rank {a.rank}")
    x = a.array
    if op == "sum":
        out = x.sum(axis=axis)
    elif op == "mean":
        out = x.mean(axis=axis)
    elif op == "max":
        out = x.max(axis=axis)
    elif op == "argmax":
        out = x.argmax(axis=axis).astype(a.dtype)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return Tensor.wrap(np.asarray(out, dtype=a.dtype))


def reshape(a: Tensor, newshape: Sequence[int]) -> Tensor:
    newshape = _check_shape(newshape)
    if int(np.prod(newshape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {newshape}")
    return Tensor.wrap(a.array.reshape(newshape).copy())
