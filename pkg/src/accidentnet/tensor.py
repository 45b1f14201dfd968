"""Dense tensors and trainable parameters.

Tensors are contiguous row-major numpy arrays, float32 by default with a
float64 mode used for gradient checking. A Parameter pairs a value tensor
with a same-shaped gradient accumulator and a trainable flag.
"""

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32


def tensor(data, dtype=DEFAULT_DTYPE):
    """Materialize `data` as a contiguous array of the working dtype."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def zeros(shape, dtype=DEFAULT_DTYPE):
    return np.zeros(shape, dtype=dtype)


def assert_finite(arr, what="tensor"):
    """Raise NumericError if any element is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def he_uniform(rng, shape, fan_in, dtype=DEFAULT_DTYPE):
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = np.sqrt(6.0 / float(fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Parameter:
    """A weight tensor plus its gradient accumulator.

    The gradient has identical extents and is all-zero right after
    `zero_grad`. Backward passes accumulate into `grad` with `+=` so a
    parameter shared across time steps sums its contributions.
    """

    def __init__(self, value, trainable=True, name=""):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self):
        self.grad[...] = 0

    def accumulate(self, delta):
        if delta.shape != self.grad.shape:
            raise ShapeError(
                f"gradient shape {delta.shape} != parameter shape {self.grad.shape}"
                + (f" for {self.name}" if self.name else "")
            )
        if self.trainable:
            self.grad += delta

    def num_elements(self):
        return int(self.value.size)

    def __repr__(self):
        flag = "trainable" if self.trainable else "frozen"
        return f"Parameter({self.name or '<unnamed>'}, shape={self.value.shape}, {flag})"
