"""Layer primitives operating on NHWC numpy arrays.

Feature maps are ``(height, width, channels)`` or batched
``(n, height, width, channels)``; every op accepts either and returns the
same rank it was given. Outputs keep the dtype of the input, so passing
float64 arrays (and float64 parameters) gives the high-precision path used
for gradient checking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, ShapeError

DEFAULT_DTYPE = np.float32
CE_EPS = 1e-12


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a (H, W, C) or (N, H, W, C) array, got shape {x.shape}")


def _unbatch(y, squeezed):
    return y[0] if squeezed else y


@dataclass
class ConvParams:
    weights: np.ndarray  # (kernel_h, kernel_w, in_channels, out_channels)
    bias: np.ndarray  # (out_channels,)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match {self.weights.shape[3]} filters")

    @classmethod
    def zeros(cls, kernel_h, kernel_w, in_channels, out_channels, dtype=DEFAULT_DTYPE):
        return cls(np.zeros((kernel_h, kernel_w, in_channels, out_channels), dtype),
                   np.zeros(out_channels, dtype))

    @property
    def kernel(self):
        return self.weights.shape[:2]

    @property
    def in_channels(self):
        return self.weights.shape[2]

    @property
    def out_channels(self):
        return self.weights.shape[3]

    @property
    def count(self):
        return self.weights.size + self.bias.size

    def arrays(self):
        return [self.weights, self.bias]


@dataclass
class DenseParams:
    weights: np.ndarray  # (in_features, out_features)
    bias: np.ndarray  # (out_features,)

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be 2-D, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"dense bias shape {self.bias.shape} does not match {self.weights.shape[1]} units")

    @property
    def in_features(self):
        return self.weights.shape[0]

    @property
    def out_features(self):
        return self.weights.shape[1]

    @property
    def count(self):
        return self.weights.size + self.bias.size

    def arrays(self):
        return [self.weights, self.bias]


# ---------------------------------------------------------------------------
# convolution

def _conv_geometry(shape, kernel, padding, stride):
    _, h, w, _ = shape
    kh, kw = kernel
    if padding == "same":
        if stride != 1:
            raise ArgumentError("same padding is only supported with stride 1")
        top, left = (kh - 1) // 2, (kw - 1) // 2
        pads = ((top, kh - 1 - top), (left, kw - 1 - left))
        return pads, h, w
    if padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(f"kernel {kernel} larger than input {h}x{w}")
        return ((0, 0), (0, 0)), (h - kh) // stride + 1, (w - kw) // stride + 1
    raise ArgumentError(f"unknown padding {padding!r}")


def _check_conv(x, params, stride):
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ArgumentError(f"stride must be a positive integer, got {stride!r}")
    if x.shape[-1] != params.in_channels:
        raise ShapeError(
            f"input has {x.shape[-1]} channels, kernel expects {params.in_channels}")


def _pad(x, pads):
    if pads == ((0, 0), (0, 0)):
        return x
    return np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))


def _im2col(xp, kernel, stride, out_h, out_w):
    """Patch matrix of shape (n*out_h*out_w, kh*kw*c), patch layout (kh, kw, c)."""
    kh, kw = kernel
    n, c = xp.shape[0], xp.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    win = win[:, :out_h, :out_w]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * out_h * out_w, kh * kw * c)


def _correlate(xb, weights, pads, stride, out_h, out_w):
    n = xb.shape[0]
    kh, kw, cin, cout = weights.shape
    if (kh, kw) == (1, 1) and stride == 1:
        y = xb.reshape(-1, cin) @ weights.reshape(cin, cout)
    else:
        cols = _im2col(_pad(xb, pads), (kh, kw), stride, out_h, out_w)
        y = cols @ weights.reshape(kh * kw * cin, cout)
    return y.reshape(n, out_h, out_w, cout)


def conv2d_forward(x, params: ConvParams, padding="same", stride=1):
    """Cross-correlate ``x`` with ``params`` and add the bias (no activation)."""
    xb, squeezed = _as_batch(x)
    _check_conv(xb, params, stride)
    pads, out_h, out_w = _conv_geometry(xb.shape, params.kernel, padding, stride)
    y = _correlate(xb, params.weights, pads, stride, out_h, out_w)
    y += params.bias
    return _unbatch(y, squeezed)


def conv2d_backward(x, params: ConvParams, grad_out, padding="same", stride=1):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`conv2d_forward`."""
    xb, squeezed = _as_batch(x)
    gb4, _ = _as_batch(grad_out)
    _check_conv(xb, params, stride)
    pads, out_h, out_w = _conv_geometry(xb.shape, params.kernel, padding, stride)
    n, h, w, _ = xb.shape
    kh, kw, cin, cout = params.weights.shape
    if gb4.shape != (n, out_h, out_w, cout):
        raise ShapeError(
            f"grad_out shape {gb4.shape} does not match conv output {(n, out_h, out_w, cout)}")

    g2 = gb4.reshape(-1, cout)
    grad_bias = g2.sum(axis=0)
    if (kh, kw) == (1, 1) and stride == 1:
        grad_w = (xb.reshape(-1, cin).T @ g2).reshape(kh, kw, cin, cout)
    else:
        cols = _im2col(_pad(xb, pads), (kh, kw), stride, out_h, out_w)
        grad_w = (cols.T @ g2).reshape(kh, kw, cin, cout)
        del cols

    if stride == 1:
        # full correlation of grad_out with the flipped, transposed kernel
        (top, bottom), (left, right) = pads
        flipped = params.weights[::-1, ::-1].transpose(0, 1, 3, 2)
        back_pads = ((kh - 1 - top, kh - 1 - bottom), (kw - 1 - left, kw - 1 - right))
        grad_x = _correlate(gb4, flipped, back_pads, 1, h, w)
        return _unbatch(grad_x, squeezed), grad_w, grad_bias

    xp_shape = (n, h + sum(pads[0]), w + sum(pads[1]), cin)
    grad_xp = np.zeros(xp_shape, dtype=np.result_type(xb, gb4))
    span_h, span_w = stride * (out_h - 1) + 1, stride * (out_w - 1) + 1
    for i in range(kh):
        for j in range(kw):
            contrib = (g2 @ params.weights[i, j].T).reshape(n, out_h, out_w, cin)
            grad_xp[:, i:i + span_h:stride, j:j + span_w:stride] += contrib
    (top, _), (left, _) = pads
    grad_x = grad_xp[:, top:top + h, left:left + w]
    return _unbatch(np.ascontiguousarray(grad_x), squeezed), grad_w, grad_bias


# ---------------------------------------------------------------------------
# pooling

@dataclass(frozen=True)
class PoolSpec:
    pool_h: int
    pool_w: int
    stride_h: Optional[int] = None
    stride_w: Optional[int] = None
    kind: str = "max"

    def __post_init__(self):
        # stride defaults to the pool size (non-overlapping windows)
        if self.stride_h is None:
            object.__setattr__(self, "stride_h", self.pool_h)
        if self.stride_w is None:
            object.__setattr__(self, "stride_w", self.pool_w)
        for v in (self.pool_h, self.pool_w, self.stride_h, self.stride_w):
            if int(v) != v or v < 1:
                raise ArgumentError(f"pool sizes and strides must be positive integers: {self}")
        if self.kind not in ("max", "average"):
            raise ArgumentError(f"pool kind must be 'max' or 'average', got {self.kind!r}")

    def output_hw(self, h, w):
        if h < self.pool_h or w < self.pool_w:
            raise ShapeError(f"pool window {self.pool_h}x{self.pool_w} larger than input {h}x{w}")
        return (h - self.pool_h) // self.stride_h + 1, (w - self.pool_w) // self.stride_w + 1

    @property
    def area(self):
        return self.pool_h * self.pool_w


class PoolState(NamedTuple):
    input_shape: tuple
    argmax: Optional[np.ndarray]  # window offset index (row-major), max pooling only


def _window_slices(spec, out_h, out_w):
    span_h = spec.stride_h * (out_h - 1) + 1
    span_w = spec.stride_w * (out_w - 1) + 1
    for i in range(spec.pool_h):
        for j in range(spec.pool_w):
            yield (slice(None), slice(i, i + span_h, spec.stride_h),
                   slice(j, j + span_w, spec.stride_w))


def pool_forward(x, spec: PoolSpec):
    """Pool each channel independently; returns ``(output, state)``.

    ``state.argmax`` holds, for max pooling, the row-major offset of the
    winning cell inside each window (first occurrence wins ties).
    """
    xb, squeezed = _as_batch(x)
    out_h, out_w = spec.output_hw(xb.shape[1], xb.shape[2])
    windows = _window_slices(spec, out_h, out_w)
    if spec.kind == "max":
        best = xb[next(windows)].copy()
        argmax = np.zeros(best.shape, dtype=np.int8 if spec.area <= 127 else np.int32)
        for k, sl in enumerate(windows, start=1):
            v = xb[sl]
            better = v > best
            np.copyto(argmax, k, where=better)
            np.maximum(best, v, out=best)
        return _unbatch(best, squeezed), PoolState(xb.shape, argmax)

    acc = np.zeros((xb.shape[0], out_h, out_w, xb.shape[3]), dtype=xb.dtype)
    for sl in windows:
        acc += xb[sl]
    acc /= spec.area
    return _unbatch(acc, squeezed), PoolState(xb.shape, None)


def pool_backward(spec: PoolSpec, state: PoolState, grad_out):
    gb, squeezed = _as_batch(grad_out)
    n, h, w, c = state.input_shape
    out_h, out_w = spec.output_hw(h, w)
    if gb.shape != (n, out_h, out_w, c):
        raise ShapeError(f"grad_out shape {gb.shape} does not match pool output {(n, out_h, out_w, c)}")
    if spec.kind == "max" and (state.argmax is None or state.argmax.shape != gb.shape):
        raise ShapeError("max-pool state does not match grad_out")

    grad_x = np.zeros(state.input_shape, dtype=gb.dtype)
    for k, sl in enumerate(_window_slices(spec, out_h, out_w)):
        if spec.kind == "max":
            grad_x[sl] += np.where(state.argmax == k, gb, 0)
        else:
            grad_x[sl] += gb / spec.area
    return _unbatch(grad_x, squeezed)


# ---------------------------------------------------------------------------
# channel concatenation

def concat_channels(inputs: Sequence[np.ndarray]):
    if len(inputs) < 2:
        raise ArgumentError("concat_channels needs at least two inputs")
    lead = inputs[0].shape[:-1]
    for t in inputs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"cannot concatenate shapes {[t.shape for t in inputs]} on channels")
    return np.concatenate(inputs, axis=-1)


def split_channels(grad, sizes: Sequence[int]):
    """Backward of :func:`concat_channels`: slice ``grad`` per input."""
    if grad.shape[-1] != sum(sizes):
        raise ShapeError(f"{grad.shape[-1]} channels cannot be split into {list(sizes)}")
    bounds = np.cumsum([0, *sizes])
    return [grad[..., a:b] for a, b in zip(bounds[:-1], bounds[1:])]


# ---------------------------------------------------------------------------
# activations

def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0)


def relu_grad(pre):
    return (pre > 0).astype(np.asarray(pre).dtype)


def swish(x):
    return x * sigmoid(x)


def swish_grad(pre):
    s = sigmoid(pre)
    return s + pre * s * (1 - s)


_ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "swish": (swish, swish_grad),
}


def activation(x, kind):
    if kind in (None, "none", "linear"):
        return x
    try:
        return _ACTIVATIONS[kind][0](x)
    except KeyError:
        raise ArgumentError(f"unknown activation {kind!r}") from None


def activation_grad(pre, kind):
    """Derivative of ``activation`` evaluated at the pre-activation ``pre``."""
    if kind in (None, "none", "linear"):
        return np.ones_like(pre)
    try:
        return _ACTIVATIONS[kind][1](pre)
    except KeyError:
        raise ArgumentError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# dense head

def dense_forward(x, params: DenseParams):
    x = np.asarray(x)
    if x.shape[-1] != params.in_features:
        raise ShapeError(f"input length {x.shape[-1]} != in_features {params.in_features}")
    return x @ params.weights + params.bias


def dense_backward(x, params: DenseParams, grad_out):
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if x.shape[-1] != params.in_features or grad_out.shape[-1] != params.out_features:
        raise ShapeError("dense_backward shapes do not match the layer")
    x2 = x.reshape(-1, params.in_features)
    g2 = grad_out.reshape(-1, params.out_features)
    grad_x = (g2 @ params.weights.T).reshape(x.shape)
    return grad_x, x2.T @ g2, g2.sum(axis=0)


def flatten(x):
    xb, squeezed = _as_batch(x)
    y = xb.reshape(xb.shape[0], -1)
    return y[0] if squeezed else y


def softmax(x):
    x = np.asarray(x)
    if x.shape[-1] < 2:
        raise ArgumentError("softmax needs at least two logits")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# dropout

def dropout(x, rate, rng=None, training=False):
    """Inverted dropout. Returns ``(output, mask)``; ``mask`` is None at inference.

    The mask already carries the ``1 / (1 - rate)`` scale.
    """
    if not 0 <= rate < 1:
        raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training:
        return x, None
    if rng is None:
        raise ArgumentError("training-mode dropout needs an rng")
    keep = rng.random(np.shape(x)) >= rate
    mask = keep.astype(np.asarray(x).dtype) / np.asarray(1 - rate, dtype=np.asarray(x).dtype)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


# ---------------------------------------------------------------------------
# loss

def cross_entropy_loss(probs, label):
    """Categorical cross-entropy on softmax output.

    Returns ``(loss, grad_logits)`` where ``grad_logits = probs - onehot`` is
    the gradient of the combined softmax + cross-entropy w.r.t. the logits.
    Batched ``probs`` of shape (n, k) with ``label`` of shape (n,) give
    per-sample losses.
    """
    probs = np.asarray(probs)
    labels = np.atleast_1d(np.asarray(label))
    p2 = probs.reshape(-1, probs.shape[-1])
    k = p2.shape[1]
    if labels.shape[0] != p2.shape[0]:
        raise ArgumentError("one label per probability row is required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ArgumentError(f"label out of range for {k} classes: {label}")
    rows = np.arange(p2.shape[0])
    loss = -np.log(p2[rows, labels] + CE_EPS)
    grad = p2.copy()
    grad[rows, labels] -= 1
    if probs.ndim == 1:
        return float(loss[0]), grad[0]
    return loss, grad
