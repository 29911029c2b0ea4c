"""Sequential networks with per-layer depth indices.

Trainable layers (dense, conv2d) are numbered 1..n in forward order. That
number is the key the learning-rate curriculum uses to pick each layer's rate.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DimensionError, FormatError, StateError, ValidationError

GradientSet = dict  # depth index -> (grad_weights, grad_bias)


class Layer:
    kind = "layer"
    trainable = False

    def __init__(self):
        self.depth_index = None
        self.cached_input = None

    @property
    def params(self):
        return None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        """Return (grad_input, (grad_weights, grad_bias) or None)."""
        raise NotImplementedError

    def _cache(self, x, train):
        self.cached_input = x if train else None

    def _cached(self):
        if self.cached_input is None:
            raise StateError(f"{self.kind} layer has no cached input; run a train-mode forward first")
        return self.cached_input

    def __repr__(self):
        return f"{type(self).__name__}()"


class Dense(Layer):
    kind = "dense"
    trainable = True

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weights = np.zeros((in_features, out_features))
        self.bias = np.zeros(out_features)

    @property
    def params(self):
        return self.weights, self.bias

    @property
    def fan_in(self):
        return self.in_features

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"dense expects (N, {self.in_features}), got {x.shape}"
            )
        self._cache(x, train)
        return T.matmul(x, self.weights) + self.bias

    def backward(self, grad_out):
        x = self._cached()
        grad_w = x.T @ grad_out
        grad_b = grad_out.sum(axis=0)
        return grad_out @ self.weights.T, (grad_w, grad_b)

    def __repr__(self):
        return f"Dense({self.in_features}, {self.out_features})"


class Conv2D(Layer):
    kind = "conv2d"
    trainable = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.weights = np.zeros((out_channels, in_channels, kernel_size, kernel_size))
        self.bias = np.zeros(out_channels)

    @property
    def params(self):
        return self.weights, self.bias

    @property
    def fan_in(self):
        return self.in_channels * self.kernel_size * self.kernel_size

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv2d expects (N, {self.in_channels}, H, W), got {x.shape}"
            )
        self._cache(x, train)
        out = T.conv2d(x, self.weights, self.stride, self.padding)
        return out + self.bias[None, :, None, None]

    def backward(self, grad_out):
        x = self._cached()
        grad_x, grad_w = T.conv2d_backward(grad_out, x, self.weights, self.stride, self.padding)
        return grad_x, (grad_w, grad_out.sum(axis=(0, 2, 3)))

    def __repr__(self):
        return (f"Conv2D({self.in_channels}, {self.out_channels}, "
                f"kernel_size={self.kernel_size}, stride={self.stride}, padding={self.padding})")


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache(x, train)
        return T.relu(x)

    def backward(self, grad_out):
        return T.relu_backward(grad_out, self._cached()), None


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, window: int = 2, stride: int | None = None):
        super().__init__()
        self.window = window
        self.stride = window if stride is None else stride

    def forward(self, x, train=False):
        self._cache(x, train)
        return T.maxpool2d(x, self.window, self.stride)

    def backward(self, grad_out):
        return T.maxpool2d_backward(grad_out, self._cached(), self.window, self.stride), None

    def __repr__(self):
        return f"MaxPool2D({self.window}, stride={self.stride})"


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._cache(x, train)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cached().shape), None


def gaussian_kernel(sigma: float, size: int = 3) -> np.ndarray:
    """Normalized 2-d Gaussian of odd width ``size`` (float64)."""
    if sigma <= 0:
        raise ValidationError("gaussian kernel needs sigma > 0")
    if size < 1 or size % 2 == 0:
        raise ValidationError(f"kernel size must be a positive odd integer, got {size}")
    offsets = np.arange(size) - size // 2
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _depthwise(x, kernel2d, backward=False):
    n, c, h, w = x.shape
    k = kernel2d.astype(x.dtype)[None, None]
    flat = x.reshape(n * c, 1, h, w)
    pad = kernel2d.shape[0] // 2
    if backward:
        # kernel is symmetric, so the input gradient is the same correlation
        out, _ = T.conv2d_backward(flat, flat, k, 1, pad, kernel_grad=False)
    else:
        out = T.conv2d(flat, k, 1, pad)
    return out.reshape(n, c, h, w)


def gaussian_smooth_apply(x, sigma: float, kernel_size: int = 3):
    """Blur every channel of ``x`` (N, C, H, W) with a same-padded Gaussian."""
    if sigma < 0:
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    if x.ndim != 4:
        raise DimensionError(f"gaussian smoothing expects (N, C, H, W), got {x.shape}")
    if sigma == 0:
        return x
    return _depthwise(x, gaussian_kernel(sigma, kernel_size))


class GaussianSmooth(Layer):
    """Activation blur used by curriculum-by-smoothing; sigma is set externally."""

    kind = "gaussian_smooth"

    def __init__(self, sigma: float = 0.0, kernel_size: int = 3):
        super().__init__()
        self.sigma = sigma
        self.kernel_size = kernel_size

    def forward(self, x, train=False):
        self._cache(x, train)
        return gaussian_smooth_apply(x, self.sigma, self.kernel_size)

    def backward(self, grad_out):
        self._cached()
        if self.sigma == 0:
            return grad_out, None
        return _depthwise(grad_out, gaussian_kernel(self.sigma, self.kernel_size), backward=True), None

    def __repr__(self):
        return f"GaussianSmooth(sigma={self.sigma}, kernel_size={self.kernel_size})"


class Network:
    """Sequential composition ``f_n(... f_2(f_1(x)) ...)``."""

    def __init__(self, layers=(), dtype="float32"):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self._ready = False
        j = 0
        for layer in self.layers:
            if layer.trainable:
                j += 1
                layer.depth_index = j
            else:
                layer.depth_index = None
        self.n = j
        for layer in self.trainable_layers:
            layer.weights = layer.weights.astype(self.dtype)
            layer.bias = layer.bias.astype(self.dtype)
        assert [l.depth_index for l in self.trainable_layers] == list(range(1, self.n + 1))

    @property
    def trainable_layers(self):
        return [layer for layer in self.layers if layer.trainable]

    def layer(self, j: int) -> Layer:
        if not 1 <= j <= self.n:
            raise ValidationError(f"depth index {j} outside 1..{self.n}")
        return self.trainable_layers[j - 1]

    def smoothing_layers(self):
        return [layer for layer in self.layers if isinstance(layer, GaussianSmooth)]

    def set_sigma(self, sigma: float):
        for layer in self.smoothing_layers():
            layer.sigma = sigma

    def parameters(self):
        """Yield ``(depth_index, weights, bias)`` in forward order."""
        for layer in self.trainable_layers:
            yield layer.depth_index, layer.weights, layer.bias

    def forward(self, x, mode="eval"):
        if mode not in ("train", "eval"):
            raise ValidationError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        out = np.asarray(x, dtype=self.dtype)
        for pos, layer in enumerate(self.layers):
            try:
                out = layer.forward(out, train)
            except DimensionError as exc:
                raise DimensionError(
                    f"layer {pos} ({layer!r}) rejected input of shape {out.shape}: {exc}"
                ) from exc
        self._ready = train
        return out

    def __call__(self, x, mode="eval"):
        return self.forward(x, mode)

    def backward(self, loss_grad) -> GradientSet:
        if not self._ready:
            raise StateError("backward called without a preceding train-mode forward")
        grads = {}
        g = np.asarray(loss_grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            g, pg = layer.backward(g)
            if pg is not None:
                grads[layer.depth_index] = pg
        return dict(sorted(grads.items()))

    def copy_params(self):
        return {j: (w.copy(), b.copy()) for j, w, b in self.parameters()}

    def load_params(self, params):
        for layer in self.trainable_layers:
            w, b = params[layer.depth_index]
            layer.weights = np.array(w, dtype=self.dtype)
            layer.bias = np.array(b, dtype=self.dtype)

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Network([{inner}], dtype={self.dtype.name})"


def init_weights(net: Network, seed: int) -> Network:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases; seeded."""
    rng = np.random.default_rng(seed)
    for layer in net.trainable_layers:
        bound = math.sqrt(6.0 / layer.fan_in)
        w = rng.uniform(-bound, bound, size=layer.weights.shape)
        layer.weights = w.astype(net.dtype)
        layer.bias = np.zeros(layer.bias.shape, dtype=net.dtype)
    return net


def mlp(in_features: int, classes: int, hidden=(128, 64), dtype="float32") -> Network:
    layers = []
    width = in_features
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers.append(Dense(width, classes))
    return Network(layers, dtype=dtype)


def cnn(in_shape, classes: int, smoothing: bool = False, kernel_size: int = 3,
        dtype="float32") -> Network:
    """conv(8) -> relu -> pool -> conv(16) -> relu -> pool -> flatten -> dense.

    Convolutions use 3x3 kernels with padding 1. With ``smoothing`` a
    GaussianSmooth layer follows each convolution.
    """
    c, h, w = in_shape
    layers = []
    for out_c in (8, 16):
        layers.append(Conv2D(c, out_c, 3, stride=1, padding=1))
        if smoothing:
            layers.append(GaussianSmooth(0.0, kernel_size))
        layers += [ReLU(), MaxPool2D(2)]
        c, h, w = out_c, h // 2, w // 2
    if h < 1 or w < 1:
        raise DimensionError(f"input {tuple(in_shape)} too small for two 2x2 pools")
    layers += [Flatten(), Dense(c * h * w, classes)]
    return Network(layers, dtype=dtype)


# Checkpoint layout (all little-endian):
#   magic b"LRCKPT\0\0", u16 version, u32 layer count, then per layer
#   u8 kind tag, u8 tensor count, and per tensor u8 itemsize, u8 ndim,
#   ndim x u32 dims, raw float data.
CHECKPOINT_MAGIC = b"LRCKPT\x00\x00"
CHECKPOINT_VERSION = 1
KIND_TAGS = {"dense": 1, "conv2d": 2, "relu": 3, "maxpool2d": 4, "flatten": 5,
             "gaussian_smooth": 6}
_FLOATS = {4: "<f4", 8: "<f8"}


def save_checkpoint(net: Network, path) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(net.layers))]
    for layer in net.layers:
        tensors = layer.params or ()
        parts.append(struct.pack("<BB", KIND_TAGS[layer.kind], len(tensors)))
        for t in tensors:
            parts.append(struct.pack("<BB", t.itemsize, t.ndim))
            parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
            parts.append(np.ascontiguousarray(t, dtype=_FLOATS[t.itemsize]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(net: Network, path) -> Network:
    """Restore parameters saved by ``save_checkpoint`` into a matching network."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("checkpoint truncated", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version, count = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", len(CHECKPOINT_MAGIC))
    if count != len(net.layers):
        raise FormatError(f"checkpoint has {count} layers, network has {len(net.layers)}",
                          len(CHECKPOINT_MAGIC) + 2)
    restored = {}
    for layer in net.layers:
        at = pos
        tag, ntensors = struct.unpack("<BB", take(2))
        if tag != KIND_TAGS[layer.kind]:
            raise FormatError(f"layer kind tag {tag} does not match {layer.kind}", at)
        tensors = []
        for _ in range(ntensors):
            at = pos
            itemsize, ndim = struct.unpack("<BB", take(2))
            if itemsize not in _FLOATS:
                raise FormatError(f"unsupported item size {itemsize}", at)
            dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
            count = int(np.prod(dims))
            data = np.frombuffer(take(count * itemsize), dtype=_FLOATS[itemsize])
            tensors.append(data.reshape(dims).copy())
        if layer.trainable:
            w, b = tensors
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise FormatError(f"parameter shapes for layer {layer.depth_index} do not match", at)
            restored[layer.depth_index] = (w, b)
    if pos != len(buf):
        raise FormatError("trailing bytes after last layer", pos)
    net.load_params(restored)
    return net
