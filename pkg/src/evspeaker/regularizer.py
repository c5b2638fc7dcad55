"""Polarity-consistency regularization.

A small reconstruction head (1x1 conv, ReLU, 1x1 conv; expansion then
compression) maps the enhanced features back to a 2-channel polarity map R.
The reference map averages each polarity's temporal channels of the encoded
grid. Both maps are normalized to unit mass per polarity channel and
compared with a mean absolute difference:

    loss = sum |R_norm - Rbar_norm| / (2 * H * W)

Normalization guard: negative values cannot carry probability mass and are
clamped to zero before the division; a channel whose clamped sum falls
below 1e-8 normalizes to the uniform map (with zero gradient), which keeps
the loss finite for silent channels. Each normalized channel sums to one,
so the loss is bounded by 2 / (H * W) and invariant to positive rescaling
of either input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    Parameter,
    pointwise_conv2d,
    pointwise_conv2d_backward,
    relu,
    relu_backward,
    uniform_param,
    zeros_param,
)

NORM_EPS = 1e-8


@dataclass(frozen=True)
class PcrConfig:
    channels: int          # enhanced feature channels feeding the head
    expansion: int = 2     # hidden width multiplier of the head

    @property
    def mid_channels(self) -> int:
        return self.expansion * self.channels


class PolarityHead:
    """Expansion-compression reconstruction head: C -> mid -> 2 channels."""

    def __init__(self, cfg: PcrConfig, rng: np.random.Generator, dtype=np.float32):
        c, mid = cfg.channels, cfg.mid_channels
        self.conv_a_w = uniform_param("pcr.head.a.weight", (mid, c), c, rng, dtype)
        self.conv_a_b = zeros_param("pcr.head.a.bias", (mid,), dtype)
        self.conv_b_w = uniform_param("pcr.head.b.weight", (2, mid), mid, rng, dtype)
        self.conv_b_b = zeros_param("pcr.head.b.bias", (2,), dtype)

    @property
    def params(self) -> list[Parameter]:
        return [self.conv_a_w, self.conv_a_b, self.conv_b_w, self.conv_b_b]

    def forward(self, features: np.ndarray):
        hidden, cache_a = pointwise_conv2d(features, self.conv_a_w.value,
                                           self.conv_a_b.value)
        act, mask = relu(hidden)
        out, cache_b = pointwise_conv2d(act, self.conv_b_w.value, self.conv_b_b.value)
        return out, (cache_a, mask, cache_b)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        cache_a, mask, cache_b = cache
        dact, dw_b, db_b = pointwise_conv2d_backward(dout, cache_b)
        self.conv_b_w.grad += dw_b
        self.conv_b_b.grad += db_b
        dhidden = relu_backward(dact, mask)
        dfeat, dw_a, db_a = pointwise_conv2d_backward(dhidden, cache_a)
        self.conv_a_w.grad += dw_a
        self.conv_a_b.grad += db_a
        return dfeat


def reference_map(grid: np.ndarray, bins: int) -> np.ndarray:
    """Average the B temporal channels of each polarity half of the grid.

    Accepts (2B, H, W) or (N, 2B, H, W) and returns the matching
    (..., 2, H, W) map; index 0 is negative polarity, 1 positive.
    """
    neg = grid[..., :bins, :, :].mean(axis=-3)
    pos = grid[..., bins:, :, :].mean(axis=-3)
    return np.stack([neg, pos], axis=-3)


def reference_map_backward(dref: np.ndarray, bins: int) -> np.ndarray:
    """Spread the reference-map gradient uniformly over each polarity half."""
    neg = np.repeat(dref[..., 0:1, :, :] / bins, bins, axis=-3)
    pos = np.repeat(dref[..., 1:2, :, :] / bins, bins, axis=-3)
    return np.concatenate([neg, pos], axis=-3)


def _normalize(maps: np.ndarray):
    """Unit-mass normalization per polarity channel with the clamp/fallback rule."""
    h, w = maps.shape[-2:]
    mask = maps > 0.0
    clamped = np.where(mask, maps, 0.0)
    sums = clamped.sum(axis=(-2, -1), keepdims=True)
    degenerate = sums < NORM_EPS
    safe = np.where(degenerate, 1.0, sums)
    q = np.where(degenerate, 1.0 / (h * w), clamped / safe)
    return q, (mask, q, safe, degenerate)


def _normalize_backward(dq: np.ndarray, cache) -> np.ndarray:
    mask, q, safe, degenerate = cache
    inner = (dq * q).sum(axis=(-2, -1), keepdims=True)
    dc = (dq - inner) / safe
    dc = np.where(degenerate, 0.0, dc)
    return dc * mask


def pcr_loss(recon: np.ndarray, reference: np.ndarray):
    """Mean absolute difference of the normalized polarity distributions.

    Accepts (2, H, W) maps or batches (N, 2, H, W); batch losses are
    averaged. Returns (loss, d_recon, d_reference).
    """
    single = recon.ndim == 3
    r = recon[None] if single else recon
    rb = reference[None] if single else reference
    if r.shape != rb.shape or r.shape[-3] != 2:
        raise ValueError(f"polarity maps must share shape (..., 2, H, W), got "
                         f"{recon.shape} vs {reference.shape}")
    n = r.shape[0]
    h, w = r.shape[-2:]
    qr, cache_r = _normalize(r)
    qb, cache_b = _normalize(rb)
    diff = qr - qb
    loss = float(np.abs(diff).sum() / (2.0 * h * w * n))
    dq = np.sign(diff) / (2.0 * h * w * n)
    dr = _normalize_backward(dq, cache_r)
    drb = _normalize_backward(-dq, cache_b)
    if single:
        return loss, dr[0], drb[0]
    return loss, dr, drb
