"""Dense tensors of order 1-3 and the binding/unbinding algebra.

Everything here works on single (unbatched) tensors and is meant to be
easy to check against loop oracles. The batched kernels used during
training live in :mod:`tprrnn.kernels`.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes or orders do not fit the operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class Tensor:
    """Immutable dense float64 tensor of order 1, 2 or 3.

    Storage is a flat row-major buffer; ``array`` exposes a read-only
    view with the logical shape.
    """

    __slots__ = ("_array",)

    def __init__(self, data, dims: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, order="C")
        if dims is not None:
            dims = tuple(int(d) for d in dims)
            if arr.size != int(np.prod(dims)):
                raise DimensionError(
                    f"{arr.size} values do not fill dims {dims}")
            arr = arr.reshape(dims)
        if not 1 <= arr.ndim <= 3:
            raise DimensionError(f"order must be 1..3, got {arr.ndim}")
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"dims must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def zeros(cls, *dims: int) -> "Tensor":
        return cls(np.zeros(dims))

    @property
    def order(self) -> int:
        return self._array.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major copy of the entries."""
        return self._array.ravel().copy()

    @property
    def array(self) -> np.ndarray:
        return self._array

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._array
        return self._array.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self._array, other._array)

    def __hash__(self):
        return hash((self.dims, self._array.tobytes()))

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        return f"Tensor(dims={self.dims}, data={self._array.tolist()!r})"


def _arr(x, order: int | None = None, name: str = "operand") -> np.ndarray:
    a = x.array if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if order is not None and a.ndim != order:
        raise DimensionError(f"{name} must have order {order}, got {a.ndim}")
    return a


def _wrap(a) -> Tensor:
    return Tensor(a)


def outer2(a, b) -> Tensor:
    """Bind two vectors: ``result[i, j] = a[i] * b[j]``."""
    a, b = _arr(a, 1, "a"), _arr(b, 1, "b")
    return _wrap(a[:, None] * b[None, :])


def outer3(a, b, c) -> Tensor:
    """Bind three vectors into an order-3 tensor ``a[i] * b[j] * c[k]``."""
    a, b, c = _arr(a, 1, "a"), _arr(b, 1, "b"), _arr(c, 1, "c")
    return _wrap(a[:, None, None] * b[None, :, None] * c[None, None, :])


def unbind2(T, u) -> Tensor:
    """Matrix-vector unbinding, ``T @ u``.

    Uses the same contraction routine as :func:`tensor_inner` so the two agree
    bitwise.
    """
    T, u = _arr(T, 2, "T"), _arr(u, 1, "u")
    if T.shape[1] != u.shape[0]:
        raise DimensionError(f"cannot unbind {T.shape} with vector of {u.shape[0]}")
    return _wrap(np.tensordot(T, u, axes=(1, 0)))


def unbind3(F, e, r) -> Tensor:
    """Retrieve the target fiber of ``F`` addressed by source ``e`` and relation ``r``.

    ``result[k] = sum_ij F[i, j, k] * e[i] * r[j]``, so that
    ``unbind3(outer3(a, b, c), a, b) == (a.a)(b.b) c``.
    """
    F, e, r = _arr(F, 3, "F"), _arr(e, 1, "e"), _arr(r, 1, "r")
    if F.shape[0] != e.shape[0] or F.shape[1] != r.shape[0]:
        raise DimensionError(
            f"cannot unbind {F.shape} with e of {e.shape[0]} and r of {r.shape[0]}")
    return _wrap(r @ np.tensordot(e, F, axes=(0, 0)))


def tensor_inner(A, B, j: int, k: int):
    """Contract modes ``j`` and ``k`` (1-based) of ``A (x) B``.

    Returns a float when the contraction leaves a scalar, a :class:`Tensor`
    otherwise.
    """
    A, B = _arr(A), _arr(B)
    order = A.ndim + B.ndim
    if not (1 <= j <= order and 1 <= k <= order) or j == k:
        raise DimensionError(f"invalid modes ({j}, {k}) for combined order {order}")
    j, k = sorted((j - 1, k - 1))
    shape = A.shape + B.shape
    if shape[j] != shape[k]:
        raise DimensionError(
            f"modes {j + 1} and {k + 1} have sizes {shape[j]} and {shape[k]}")
    # contract directly when the modes come from different operands, so the
    # full outer product is never materialised
    if j < A.ndim <= k:
        out = np.tensordot(A, B, axes=(j, k - A.ndim))
    else:
        out = np.trace(np.multiply.outer(A, B), axis1=j, axis2=k)
    out = np.asarray(out)
    if out.ndim == 0:
        value = float(out)
        if not np.isfinite(value):
            raise NonFiniteError("contraction is not finite")
        return value
    return _wrap(out)


def _same_dims(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: dims {a.shape} and {b.shape} differ")


def add(A, B) -> Tensor:
    a, b = _arr(A), _arr(B)
    _same_dims(a, b, "add")
    return _wrap(a + b)


def sub(A, B) -> Tensor:
    a, b = _arr(A), _arr(B)
    _same_dims(a, b, "sub")
    return _wrap(a - b)


def scale(A, c: float) -> Tensor:
    return _wrap(_arr(A) * float(c))


def hadamard(a, b) -> Tensor:
    a, b = _arr(a), _arr(b)
    _same_dims(a, b, "hadamard")
    return _wrap(a * b)


def dot(a, b) -> float:
    a, b = _arr(a, 1, "a"), _arr(b, 1, "b")
    _same_dims(a, b, "dot")
    value = float(a @ b)
    if not np.isfinite(value):
        raise NonFiniteError("dot product is not finite")
    return value
