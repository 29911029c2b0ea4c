"""Dense tensor kernels used by the layers, plus a finite-difference oracle.

Tensors are plain ``numpy.ndarray`` objects in row-major (C) order. Every
kernel here is a pure function of its inputs; the backward helpers recompute
whatever they need from the forward inputs instead of keeping hidden state.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, ValidationError

Tensor = np.ndarray

DTYPES = {"float32": np.float32, "float64": np.float64}


def as_tensor(data, dtype=np.float64) -> Tensor:
    """Return a C-contiguous array of ``dtype``; rejects empty shapes."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.size == 0 or any(d < 1 for d in arr.shape):
        raise DimensionError(f"tensor shape {arr.shape} has a zero dimension")
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def _windows(x: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    # (N, C, H', W', kh, kw) view, no copy
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_checks(x: Tensor, kernel: Tensor, stride: int, padding: int):
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}"
        )
    if stride < 1 or padding < 0:
        raise ValidationError(f"invalid stride={stride} / padding={padding}")
    kh, kw = kernel.shape[2:]
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise DimensionError(
            f"kernel {kernel.shape} larger than padded input {x.shape} (padding={padding})"
        )


def _pad(x: Tensor, padding: int) -> Tensor:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N, C, H, W) with ``kernel`` (F, C, kh, kw)."""
    _conv_checks(x, kernel, stride, padding)
    kh, kw = kernel.shape[2:]
    cols = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(cols, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(grad_out: Tensor, x: Tensor, kernel: Tensor, stride: int = 1,
                    padding: int = 0, kernel_grad: bool = True):
    """Gradients of ``conv2d`` with respect to its input and kernel.

    Returns ``(grad_input, grad_kernel)``; ``grad_kernel`` is None when
    ``kernel_grad`` is false.
    """
    kh, kw = kernel.shape[2:]
    xp = _pad(x, padding)
    grad_kernel = None
    if kernel_grad:
        cols = _windows(xp, kh, kw, stride)
        grad_kernel = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 2, 3]))

    oh, ow = grad_out.shape[2:]
    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(grad_out, kernel[:, :, i, j], axes=([1], [0]))
            grad_xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    if padding:
        grad_xp = grad_xp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(grad_xp), grad_kernel


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    return grad_out * (x > 0)


def _pool_checks(x: Tensor, window: int, stride: int):
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects a 4-d input, got {x.shape}")
    if window < 1 or stride < 1:
        raise ValidationError(f"invalid window={window} / stride={stride}")
    if window > x.shape[2] or window > x.shape[3]:
        raise DimensionError(f"pool window {window} larger than input {x.shape}")


def _pool_slices(x: Tensor, window: int, stride: int):
    """Yield ``(flat offset, view)`` for every position inside the window.

    Indexing ``x[:, :, rows, cols]`` gives that window position for all
    windows at once, in the pooled output's shape. Offsets come in row-major
    order, which fixes the first-maximum tie rule.
    """
    oh = (x.shape[2] - window) // stride + 1
    ow = (x.shape[3] - window) // stride + 1
    for di in range(window):
        for dj in range(window):
            yield di * window + dj, (slice(di, di + stride * oh, stride),
                                     slice(dj, dj + stride * ow, stride))


def maxpool2d(x: Tensor, window: int = 2, stride: int | None = None) -> Tensor:
    stride = window if stride is None else stride
    _pool_checks(x, window, stride)
    out = None
    for _, (rs, cs) in _pool_slices(x, window, stride):
        out = x[:, :, rs, cs].copy() if out is None else np.maximum(out, x[:, :, rs, cs])
    return out


def maxpool2d_backward(grad_out: Tensor, x: Tensor, window: int = 2,
                       stride: int | None = None) -> Tensor:
    """Route each output gradient to the first maximum of its window."""
    stride = window if stride is None else stride
    pooled = maxpool2d(x, window, stride)
    grad = np.zeros_like(x)
    taken = np.zeros(pooled.shape, dtype=bool)
    # elementwise masks only: no data-dependent branching or scatter
    for _, (rs, cs) in _pool_slices(x, window, stride):
        hit = x[:, :, rs, cs] == pooled
        hit &= ~taken
        taken |= hit
        grad[:, :, rs, cs] += grad_out * hit
    return grad


def _check_labels(labels, n: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError("labels must be integer class indices")
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise ValidationError(f"labels must lie in [0, {classes})")
    return labels


def softmax_xent(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean softmax cross-entropy over the batch and the row-stochastic probs."""
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise DimensionError(f"logits must be (N, C) with N >= 1, got {logits.shape}")
    n, classes = logits.shape
    labels = _check_labels(labels, n, classes)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    log_probs = shifted - np.log(denom)
    loss = -float(log_probs[np.arange(n), labels].mean())
    return loss, probs


def softmax_xent_backward(probs: Tensor, labels) -> Tensor:
    """Gradient of the mean cross-entropy with respect to the logits."""
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), np.asarray(labels)] -= 1
    grad /= n
    return grad


def finite_diff_grad(f, x: Tensor, eps: float = 1e-6, indices=None) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` is perturbed in place and restored afterwards. When ``indices`` (an
    iterable of flat positions) is given only those coordinates are probed
    and the rest of the returned gradient is left at zero.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    grad = np.zeros(x.shape, dtype=np.float64)
    flat_x = x.reshape(-1)
    if not np.shares_memory(flat_x, x):
        raise ValidationError("finite_diff_grad needs a contiguous tensor")
    flat_g = grad.reshape(-1)
    positions = range(flat_x.size) if indices is None else indices
    for i in positions:
        orig = flat_x[i]
        flat_x[i] = orig + eps
        hi = float(f(x))
        flat_x[i] = orig - eps
        lo = float(f(x))
        flat_x[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function value while probing coordinate {i}")
        flat_g[i] = (hi - lo) / (2 * eps)
    return grad
