"""Dense float64 kernels: linear algebra, softmax, convolution, pooling,
normalization, plus a central-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every function
is pure: inputs are never modified. Backward helpers return gradients with
respect to each differentiable argument given the upstream gradient of the
output.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import (
    DegenerateRowError,
    DimensionError,
    InvalidStatisticsError,
    NumericFailureError,
    UnsupportedKernelError,
)

Tensor = np.ndarray

DEFAULT_BN_EPS = 1e-5


def as_tensor(values, shape=None) -> Tensor:
    """Copy ``values`` into a float64 array, optionally reshaped.

    Raises DimensionError when ``product(shape) != len(data)`` or when any
    extent is < 1.
    """
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if math.prod(shape) != arr.size:
            raise DimensionError(f"shape {list(shape)} does not hold {arr.size} values")
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(s < 1 for s in arr.shape):
        raise DimensionError(f"tensor extents must all be >= 1, got {list(arr.shape)}")
    return arr


def tensor_to_json(t: Tensor) -> dict:
    t = np.asarray(t, dtype=np.float64)
    return {"shape": list(t.shape), "data": [float(v) for v in t.ravel()]}


def tensor_from_json(obj: dict) -> Tensor:
    try:
        return as_tensor(obj["data"], obj["shape"])
    except (KeyError, TypeError) as exc:
        raise DimensionError(f"malformed tensor document: {exc}") from exc


def _require_ndim(name, t, ndim):
    if t.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {list(t.shape)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _require_ndim("a", a, 2)
    _require_ndim("b", b, 2)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {list(a.shape)} x {list(b.shape)}"
        )
    return a @ b


def softmax_rows(scores: Tensor) -> Tensor:
    """Row-wise softmax. ``-inf`` entries map to exactly 0."""
    s = np.asarray(scores, dtype=np.float64)
    _require_ndim("scores", s, 2)
    if np.isnan(s).any() or np.isposinf(s).any():
        raise NumericFailureError("softmax input contains NaN or +inf")
    row_max = s.max(axis=1, keepdims=True)
    dead = ~np.isfinite(row_max[:, 0])
    if dead.any():
        raise DegenerateRowError(
            f"softmax rows {np.nonzero(dead)[0].tolist()} have no finite entry"
        )
    e = np.exp(s - row_max)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(probs: Tensor, upstream: Tensor) -> Tensor:
    """Gradient wrt the logits given the softmax output ``probs``."""
    return probs * (upstream - (upstream * probs).sum(axis=1, keepdims=True))


def _check_odd(k):
    if k < 1 or k % 2 == 0:
        raise UnsupportedKernelError(f"kernel size must be odd and >= 1, got {k}")


def conv2d(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Same-padded stride-1 cross-correlation.

    x: C_in x H x W, weights: C_out x C_in x k x k, bias: C_out.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    _require_ndim("input", x, 3)
    _require_ndim("weights", w, 4)
    c_out, c_in, kh, kw = w.shape
    if kh != kw:
        raise UnsupportedKernelError(f"kernel must be square, got {kh}x{kw}")
    _check_odd(kh)
    if c_in != x.shape[0]:
        raise DimensionError(
            f"conv input channels {x.shape[0]} != weight channels {c_in} "
            f"(input {list(x.shape)}, weights {list(w.shape)})"
        )
    if b.shape != (c_out,):
        raise DimensionError(f"bias shape {list(b.shape)} != [{c_out}]")
    k = kh
    pad = k // 2
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.empty((c_out, h, wd))
    out[:] = b[:, None, None]
    for di in range(k):
        for dj in range(k):
            out += np.tensordot(w[:, :, di, dj], xp[:, di:di + h, dj:dj + wd], axes=1)
    return out


def conv2d_backward(x: Tensor, weights: Tensor, upstream: Tensor):
    """Return ``(d_input, d_weights, d_bias)`` for :func:`conv2d`."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    k = w.shape[2]
    pad = k // 2
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    d_xp = np.zeros_like(xp)
    d_w = np.empty_like(w)
    for di in range(k):
        for dj in range(k):
            window = xp[:, di:di + h, dj:dj + wd]
            d_w[:, :, di, dj] = np.tensordot(g, window, axes=([1, 2], [1, 2]))
            d_xp[:, di:di + h, dj:dj + wd] += np.tensordot(w[:, :, di, dj], g, axes=([0], [0]))
    d_x = d_xp[:, pad:pad + h, pad:pad + wd]
    return d_x, d_w, g.sum(axis=(1, 2))


def maxpool2d(x: Tensor, k: int) -> Tensor:
    """Stride-1 k x k max pooling; out-of-image cells never win the max."""
    x = np.asarray(x, dtype=np.float64)
    _require_ndim("input", x, 3)
    _check_odd(k)
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return windows.max(axis=(-2, -1))


def _bn_check(x, mean, var, gamma, beta, eps):
    c = x.shape[0]
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        if v.shape != (c,):
            raise DimensionError(f"batchnorm {name} shape {list(v.shape)} != [{c}]")
    if eps < 0:
        raise InvalidStatisticsError(f"eps must be >= 0, got {eps}")
    if (var < 0).any():
        raise InvalidStatisticsError(f"negative variance in channels {np.nonzero(var < 0)[0].tolist()}")
    if (var + eps <= 0).any():
        raise InvalidStatisticsError("var + eps must be > 0")


def batchnorm(x: Tensor, mean: Tensor, var: Tensor, gamma: Tensor, beta: Tensor,
              eps: float = DEFAULT_BN_EPS) -> Tensor:
    """Inference-mode per-channel normalization of a C x H x W tensor."""
    x = np.asarray(x, dtype=np.float64)
    _require_ndim("input", x, 3)
    mean, var, gamma, beta = (np.asarray(v, dtype=np.float64) for v in (mean, var, gamma, beta))
    _bn_check(x, mean, var, gamma, beta, eps)
    inv = 1.0 / np.sqrt(var + eps)
    return (gamma * inv)[:, None, None] * (x - mean[:, None, None]) + beta[:, None, None]


def batchnorm_backward(x, mean, var, gamma, upstream, eps=DEFAULT_BN_EPS):
    """Return ``(d_input, d_mean, d_var, d_gamma, d_beta)``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    mean, var, gamma = (np.asarray(v, dtype=np.float64) for v in (mean, var, gamma))
    inv = 1.0 / np.sqrt(var + eps)
    centered = x - mean[:, None, None]
    d_x = (gamma * inv)[:, None, None] * g
    d_gamma = (g * centered).sum(axis=(1, 2)) * inv
    d_beta = g.sum(axis=(1, 2))
    d_mean = -gamma * inv * d_beta
    d_var = -0.5 * gamma * inv ** 3 * (g * centered).sum(axis=(1, 2))
    return d_x, d_mean, d_var, d_gamma, d_beta


def relu(x: Tensor) -> Tensor:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    return np.where(np.asarray(x) > 0, upstream, 0.0)


def grad_check(f: Callable[[Tensor], float], x: Tensor, grad: Tensor, h: float = 1e-5) -> float:
    """Compare an analytic gradient against central differences.

    Returns ``max_i |grad_i - fd_i| / max(1, |grad_i|)`` where ``fd_i`` is
    ``(f(x + h e_i) - f(x - h e_i)) / 2h``. Raises NumericFailureError if any
    evaluation is non-finite.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise DimensionError(f"gradient shape {list(grad.shape)} != input shape {list(x.shape)}")
    flat = x.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(f(x))
        flat[i] = orig - h
        minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise NumericFailureError(f"non-finite evaluation at coordinate {i}")
        fd = (plus - minus) / (2.0 * h)
        a = grad.flat[i]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
