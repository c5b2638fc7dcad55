"""Dense-tensor primitives with explicit forward and backward passes.

Everything is numpy: a "tensor" is an ndarray, float32 on the production
path and float64 when gradients are being verified against finite
differences (the kernels follow the dtype of their inputs). Each primitive
returns a cache from its forward pass and consumes it in the matching
backward; reductions use numpy's fixed left-to-right summation so repeated
runs are bitwise identical.

Spatial kernels accept either a single (C, H, W) map or a batch
(N, C, H, W); single maps are promoted to a one-sample batch internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Parameter:
    """A learnable array with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def uniform_param(
    name: str, shape: tuple, fan_in: int, rng: np.random.Generator, dtype=np.float32
) -> Parameter:
    """Weight initialized uniformly in +/- sqrt(1 / fan_in)."""
    bound = float(np.sqrt(1.0 / max(1, fan_in)))
    value = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Parameter(name, value)


def zeros_param(name: str, shape: tuple, dtype=np.float32) -> Parameter:
    return Parameter(name, np.zeros(shape, dtype=dtype))


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _unbatch(y: np.ndarray, squeeze: bool) -> np.ndarray:
    return y[0] if squeeze else y


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def relu(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def sigmoid(x: np.ndarray):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------------------
# Two-layer perceptron on 2-vectors (hidden 32, ReLU, scalar output)
# ---------------------------------------------------------------------------


class Dense2:
    """Pointwise regressor mapping rows of shape (N, 2) to scalars.

    The row count can reach millions (events times temporal bins), so the
    hidden activations are streamed through a small reusable scratch block
    instead of materializing an (N, hidden) array; the backward pass
    recomputes each chunk's activations from the cached input. Chunks are
    processed left to right, keeping accumulation order fixed.
    """

    CHUNK = 65536

    def __init__(self, rng: np.random.Generator, hidden: int = 32,
                 name: str = "mlp", dtype=np.float32):
        self.w1 = uniform_param(f"{name}.w1", (hidden, 2), 2, rng, dtype)
        self.b1 = zeros_param(f"{name}.b1", (hidden,), dtype)
        self.w2 = uniform_param(f"{name}.w2", (1, hidden), hidden, rng, dtype)
        self.b2 = zeros_param(f"{name}.b2", (1,), dtype)
        self._hidden = hidden
        self._dtype = dtype
        self._scratch = np.empty((0, hidden), dtype=dtype)
        self._mask = np.empty((0, hidden), dtype=bool)

    @property
    def params(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def _buf(self, rows: int) -> np.ndarray:
        if self._scratch.shape[0] < rows or self._scratch.dtype != self._dtype:
            self._scratch = np.empty((min(rows, self.CHUNK), self._hidden),
                                     dtype=self._dtype)
        return self._scratch[:rows]

    def _hidden_chunk(self, x_chunk: np.ndarray) -> np.ndarray:
        h = self._buf(x_chunk.shape[0])
        np.matmul(x_chunk, self.w1.value.T, out=h)
        h += self.b1.value
        np.maximum(h, 0.0, out=h)
        return h

    def forward(self, x: np.ndarray):
        n = x.shape[0]
        y = np.empty(n, dtype=self._dtype)
        for lo in range(0, n, self.CHUNK):
            hi = min(lo + self.CHUNK, n)
            h = self._hidden_chunk(x[lo:hi])
            y[lo:hi] = h @ self.w2.value[0]
        y += self.b2.value[0]
        return y, x

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        x = cache
        n = x.shape[0]
        dx = np.empty_like(x)
        for lo in range(0, n, self.CHUNK):
            hi = min(lo + self.CHUNK, n)
            h = self._hidden_chunk(x[lo:hi])
            dy_chunk = dy[lo:hi]
            self.w2.grad[0] += dy_chunk @ h
            # reuse the activation block as the hidden-gradient block
            if self._mask.shape[0] < h.shape[0]:
                self._mask = np.empty((h.shape[0], self._hidden), dtype=bool)
            mask = self._mask[:h.shape[0]]
            np.greater(h, 0.0, out=mask)
            np.multiply(dy_chunk[:, None], self.w2.value[0][None, :], out=h)
            h *= mask
            self.w1.grad += h.T @ x[lo:hi]
            self.b1.grad += h.sum(axis=0)
            dx[lo:hi] = h @ self.w1.value
        self.b2.grad[0] += dy.sum()
        return dx


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def pointwise_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """1x1 convolution: per-pixel linear map over channels."""
    xb, squeeze = _as_batch(x)
    y = np.einsum("oc,nchw->nohw", weight, xb) + bias[:, None, None]
    return _unbatch(y, squeeze), (xb, weight, squeeze)


def pointwise_conv2d_backward(dy: np.ndarray, cache):
    xb, weight, squeeze = cache
    dyb = dy[None] if squeeze else dy
    dw = np.einsum("nohw,nchw->oc", dyb, xb)
    db = dyb.sum(axis=(0, 2, 3))
    dx = np.einsum("oc,nohw->nchw", weight, dyb)
    return _unbatch(dx, squeeze), dw, db


def depthwise_hconv1d(x: np.ndarray, kernels: np.ndarray):
    """Per-channel convolution along the width axis, zero padded to keep W.

    ``kernels`` has shape (C, k) with odd k; rows are never mixed.
    """
    xb, squeeze = _as_batch(x)
    c, k = kernels.shape
    if xb.shape[1] != c:
        raise ValueError("kernel channel count does not match input")
    pad = (k - 1) // 2
    xp = np.pad(xb, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    w = xb.shape[3]
    y = np.zeros_like(xb)
    for j in range(k):
        y += kernels[:, j][None, :, None, None] * xp[:, :, :, j:j + w]
    return _unbatch(y, squeeze), (xp, kernels, squeeze, w)


def depthwise_hconv1d_backward(dy: np.ndarray, cache):
    xp, kernels, squeeze, w = cache
    dyb = dy[None] if squeeze else dy
    c, k = kernels.shape
    pad = (k - 1) // 2
    dk = np.zeros_like(kernels)
    dxp = np.zeros_like(xp)
    for j in range(k):
        dk[:, j] = np.einsum("nchw,nchw->c", dyb, xp[:, :, :, j:j + w])
        dxp[:, :, :, j:j + w] += kernels[:, j][None, :, None, None] * dyb
    dx = dxp[:, :, :, pad:pad + w] if pad else dxp
    return _unbatch(dx, squeeze), dk


def conv1d_channels(v: np.ndarray, weight: np.ndarray, bias: float):
    """Length-preserving 1-D convolution over a channel-descriptor vector.

    ``weight`` has odd length k; k = 1 reduces to a per-element scale plus
    bias. Accepts a single (L,) descriptor or a batch (N, L).
    """
    single = v.ndim == 1
    vb = v[None] if single else v
    k = weight.shape[0]
    pad = (k - 1) // 2
    vp = np.pad(vb, ((0, 0), (pad, pad)))
    length = vb.shape[1]
    y = np.zeros_like(vb)
    for j in range(k):
        y += weight[j] * vp[:, j:j + length]
    y = y + bias
    return (y[0] if single else y), (vp, weight, single, length)


def conv1d_channels_backward(dy: np.ndarray, cache):
    vp, weight, single, length = cache
    dyb = dy[None] if single else dy
    k = weight.shape[0]
    pad = (k - 1) // 2
    dw = np.zeros_like(weight)
    dvp = np.zeros_like(vp)
    for j in range(k):
        dw[j] = float(np.sum(dyb * vp[:, j:j + length]))
        dvp[:, j:j + length] += weight[j] * dyb
    db = float(dyb.sum())
    dv = dvp[:, pad:pad + length] if pad else dvp
    return (dv[0] if single else dv), dw, db


def gap2d(x: np.ndarray):
    """Global average pool over the spatial axes."""
    xb, squeeze = _as_batch(x)
    y = xb.mean(axis=(2, 3))
    return (y[0] if squeeze else y), (xb.shape, squeeze)


def gap2d_backward(dy: np.ndarray, cache):
    shape, squeeze = cache
    dyb = dy[None] if squeeze else dy
    n, c, h, w = shape
    dx = np.broadcast_to(dyb[:, :, None, None] / (h * w), shape).copy()
    return _unbatch(dx, squeeze)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, pad: int = 1):
    """General kxk convolution via im2col; used by the residual backbone."""
    xb, squeeze = _as_batch(x)
    n, cin, h, w = xb.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError("weight channel count does not match input")
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (N, Cin, Ho, Wo, kh, kw)
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    w_mat = weight.reshape(cout, cin * kh * kw)
    y = cols @ w_mat.T + bias
    y = y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    cache = (cols, w_mat, xb.shape, (kh, kw), stride, pad, squeeze, (ho, wo))
    return _unbatch(np.ascontiguousarray(y), squeeze), cache


def conv2d_backward(dy: np.ndarray, cache):
    cols, w_mat, xshape, (kh, kw), stride, pad, squeeze, (ho, wo) = cache
    dyb = dy[None] if squeeze else dy
    n, cin, h, w = xshape
    cout = w_mat.shape[0]
    dy_mat = dyb.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
    dw = (dy_mat.T @ cols).reshape(cout, cin, kh, kw)
    db = dy_mat.sum(axis=0)
    dcols = dy_mat @ w_mat
    dcols = dcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=dyb.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, :, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return _unbatch(dx, squeeze), dw, db


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Affine map on feature vectors: (N, F) -> (N, K)."""
    y = x @ weight.T + bias
    return y, (x, weight)


def linear_backward(dy: np.ndarray, cache):
    x, weight = cache
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ weight
    return dx, dw, db


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


class BatchNorm2d:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with the batch statistics (biased variance) and
    folds them into the running estimates with momentum 0.1; eval mode uses
    the running estimates. A single-sample batch is allowed, in which case
    the statistics reduce over H x W only.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, channels: int, name: str = "bn", dtype=np.float32):
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = zeros_param(f"{name}.beta", (channels,), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    @property
    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {
            f"{self.gamma.name[:-6]}.running_mean": self.running_mean,
            f"{self.gamma.name[:-6]}.running_var": self.running_var,
        }

    def forward(self, x: np.ndarray, training: bool):
        xb, squeeze = _as_batch(x)
        if training:
            mean = xb.mean(axis=(0, 2, 3))
            var = xb.var(axis=(0, 2, 3))
            self.running_mean = (
                (1 - self.MOMENTUM) * self.running_mean + self.MOMENTUM * mean
            ).astype(self.running_mean.dtype)
            self.running_var = (
                (1 - self.MOMENTUM) * self.running_var + self.MOMENTUM * var
            ).astype(self.running_var.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        x_hat = (xb - mean[:, None, None]) * inv_std[:, None, None]
        y = self.gamma.value[:, None, None] * x_hat + self.beta.value[:, None, None]
        cache = (x_hat, inv_std, training, squeeze)
        return _unbatch(y, squeeze), cache

    def backward(self, dy: np.ndarray, cache):
        x_hat, inv_std, training, squeeze = cache
        dyb = dy[None] if squeeze else dy
        self.gamma.grad += np.einsum("nchw,nchw->c", dyb, x_hat)
        self.beta.grad += dyb.sum(axis=(0, 2, 3))
        g = self.gamma.value[:, None, None] * dyb
        if not training:
            dx = g * inv_std[:, None, None]
            return _unbatch(dx, squeeze)
        mean_g = g.mean(axis=(0, 2, 3))
        mean_gx = (g * x_hat).mean(axis=(0, 2, 3))
        dx = inv_std[:, None, None] * (
            g - mean_g[:, None, None] - x_hat * mean_gx[:, None, None]
        )
        return _unbatch(dx, squeeze)


# ---------------------------------------------------------------------------
# Classification loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels):
    """Mean cross-entropy over the batch; gradient is softmax minus one-hot.

    Accepts a single (K,) logit vector with an int label or a batch (N, K)
    with an int array.
    """
    single = logits.ndim == 1
    lb = logits[None] if single else logits
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = lb.shape
    shifted = lb - lb.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad), (probs[0] if single else probs)
