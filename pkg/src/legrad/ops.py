"""Dense float kernels used everywhere else in the engine.

Tensors are plain numpy arrays, row-major, dtype float32 or float64.
Every kernel validates that its output is finite: NaN/Inf anywhere is a
hard error, never a silent result. Kernels are pure functions and
deterministic run-to-run in single-threaded mode.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

FLOAT_DTYPES = (np.float32, np.float64)

# tanh-approximation constants shared by gelu and its derivative
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


class NumericError(ValueError):
    """A kernel produced (or was handed) non-finite values."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested kernel."""


def as_tensor(data, dtype=np.float64) -> np.ndarray:
    """Coerce to a contiguous float32/float64 array."""
    dtype = np.dtype(dtype)
    if dtype.type not in FLOAT_DTYPES:
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    return np.ascontiguousarray(np.asarray(data, dtype=dtype))


def check_finite(x: np.ndarray, where: str = "kernel") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values produced by {where}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a[m,k] @ b[k,p] with a fixed reduction order."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax (max-subtracted); rows sum to 1 along `axis`."""
    check_finite(x, "softmax input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / np.sum(e, axis=axis, keepdims=True), "softmax")


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization to zero mean / unit variance, then affine."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return check_finite(xhat * gain + bias, "layer_norm")


def layer_norm_backward(x: np.ndarray, gain: np.ndarray, grad_out: np.ndarray,
                        eps: float = 1e-5) -> np.ndarray:
    """Gradient of layer_norm w.r.t. its input, rows independent."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    gy = grad_out * gain
    grad = inv * (gy - np.mean(gy, axis=-1, keepdims=True)
                  - xhat * np.mean(gy * xhat, axis=-1, keepdims=True))
    return check_finite(grad, "layer_norm_backward")


def gelu(x: np.ndarray, approximate: bool = True) -> np.ndarray:
    """GELU activation; tanh approximation by default, exact erf behind the flag."""
    if approximate:
        inner = _GELU_K * (x + _GELU_C * x ** 3)
        out = 0.5 * x * (1.0 + np.tanh(inner))
    else:
        out = 0.5 * x * (1.0 + erf(x / np.sqrt(np.asarray(2.0, dtype=x.dtype))))
    return check_finite(out.astype(x.dtype, copy=False), "gelu")


def gelu_backward(x: np.ndarray, approximate: bool = True) -> np.ndarray:
    """Elementwise derivative of gelu at x."""
    if approximate:
        inner = _GELU_K * (x + _GELU_C * x ** 3)
        t = np.tanh(inner)
        dt = (1.0 - t ** 2) * _GELU_K * (1.0 + 3.0 * _GELU_C * x ** 2)
        out = 0.5 * (1.0 + t) + 0.5 * x * dt
    else:
        sqrt2 = np.sqrt(np.asarray(2.0, dtype=x.dtype))
        phi = 0.5 * (1.0 + erf(x / sqrt2))
        pdf = np.exp(-0.5 * x ** 2) / np.sqrt(np.asarray(2.0 * np.pi, dtype=x.dtype))
        out = phi + x * pdf
    return check_finite(out.astype(x.dtype, copy=False), "gelu_backward")


def relu(x: np.ndarray) -> np.ndarray:
    return check_finite(np.maximum(x, 0), "relu")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"add shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return check_finite(a + b, "add")


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"mul shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return check_finite(a * b, "mul")


def scale(a: np.ndarray, alpha: float) -> np.ndarray:
    return check_finite(a * alpha, "scale")


def transpose(a: np.ndarray, axes=None) -> np.ndarray:
    return np.transpose(a, axes)


def reshape(a: np.ndarray, shape) -> np.ndarray:
    return np.reshape(a, shape)


def slice_(a: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    return a[tuple(index)]


def mean_over_axes(a: np.ndarray, axes) -> np.ndarray:
    axes = tuple(np.atleast_1d(axes).tolist())
    return check_finite(np.mean(a, axis=axes), "mean_over_axes")
