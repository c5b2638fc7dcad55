"""Structure-aware spatial enhancement of voxel features.

Three stages applied to the encoded (2B, H, W) grid:

* channel compression: a 1x1 convolution projecting 2B channels down to C;
* directional smoothing: a per-channel horizontal 3-tap convolution
  followed by batch normalization and ReLU - rows are never mixed, so
  vertically structured patterns survive while horizontal noise is
  averaged out;
* channel attention: a sigmoid gate from the pooled descriptor rescales
  each smoothed channel in (0, 1).

Output is therefore elementwise non-negative and supported on the same
rows as the smoothed input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    BatchNorm2d,
    Parameter,
    conv1d_channels,
    conv1d_channels_backward,
    depthwise_hconv1d,
    depthwise_hconv1d_backward,
    gap2d,
    gap2d_backward,
    pointwise_conv2d,
    pointwise_conv2d_backward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    uniform_param,
    zeros_param,
)


@dataclass(frozen=True)
class EnhancerConfig:
    in_channels: int
    channels: int = 16
    smooth_kernel: int = 3
    att_kernel: int = 1

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.smooth_kernel % 2 == 0 or self.att_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")


class SpatialEnhancer:
    def __init__(self, cfg: EnhancerConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        c, twob = cfg.channels, cfg.in_channels
        self.ccl_w = uniform_param("sse.ccl.weight", (c, twob), twob, rng, dtype)
        self.ccl_b = zeros_param("sse.ccl.bias", (c,), dtype)
        # Near-identity start: the center tap dominates until training moves it.
        kernels = np.zeros((c, cfg.smooth_kernel), dtype=dtype)
        kernels[:, cfg.smooth_kernel // 2] = 1.0
        kernels += rng.uniform(-0.01, 0.01, size=kernels.shape).astype(dtype)
        self.dss_k = Parameter("sse.dss.kernels", kernels)
        self.bn = BatchNorm2d(c, name="sse.dss.bn", dtype=dtype)
        self.att_w = uniform_param("sse.att.weight", (cfg.att_kernel,), cfg.att_kernel,
                                   rng, dtype)
        self.att_b = zeros_param("sse.att.bias", (1,), dtype)

    @property
    def params(self) -> list[Parameter]:
        return [self.ccl_w, self.ccl_b, self.dss_k, *self.bn.params,
                self.att_w, self.att_b]

    def channel_compress(self, grid: np.ndarray):
        return pointwise_conv2d(grid, self.ccl_w.value, self.ccl_b.value)

    def directional_smooth(self, comp: np.ndarray, training: bool):
        conv, conv_cache = depthwise_hconv1d(comp, self.dss_k.value)
        normed, bn_cache = self.bn.forward(conv, training)
        out, mask = relu(normed)
        return out, (conv_cache, bn_cache, mask)

    def spatial_attention(self, smooth: np.ndarray):
        z, gap_cache = gap2d(smooth)
        pre, conv_cache = conv1d_channels(z, self.att_w.value, float(self.att_b.value[0]))
        gate, sig_cache = sigmoid(pre)
        out = smooth * gate[..., :, None, None]
        return out, (smooth, gate, sig_cache, conv_cache, gap_cache)

    def forward(self, grid: np.ndarray, training: bool):
        comp, ccl_cache = self.channel_compress(grid)
        smooth, dss_cache = self.directional_smooth(comp, training)
        out, att_cache = self.spatial_attention(smooth)
        return out, (ccl_cache, dss_cache, att_cache)

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        ccl_cache, dss_cache, att_cache = cache

        smooth, gate, sig_cache, conv_cache, gap_cache = att_cache
        dsmooth = dout * gate[..., :, None, None]
        dgate = np.einsum("...chw,...chw->...c", dout, smooth)
        dpre = sigmoid_backward(dgate, sig_cache)
        dz, dw, db = conv1d_channels_backward(dpre, conv_cache)
        self.att_w.grad += dw
        self.att_b.grad[0] += db
        dsmooth += gap2d_backward(dz, gap_cache)

        conv_cache_dss, bn_cache, mask = dss_cache
        dnormed = relu_backward(dsmooth, mask)
        dconv = self.bn.backward(dnormed, bn_cache)
        dcomp, dk = depthwise_hconv1d_backward(dconv, conv_cache_dss)
        self.dss_k.grad += dk

        dgrid, dw_ccl, db_ccl = pointwise_conv2d_backward(dcomp, ccl_cache)
        self.ccl_w.grad += dw_ccl
        self.ccl_b.grad += db_ccl
        return dgrid


class FixedAverageProjector:
    """Non-learned stand-in for the enhancer used by the ablation harness.

    Projects 2B channels onto C by averaging contiguous channel groups, so
    the backbone input shape is unchanged while all enhancement is removed.
    """

    def __init__(self, in_channels: int, channels: int, dtype=np.float32):
        groups = np.array_split(np.arange(in_channels), channels)
        proj = np.zeros((channels, in_channels), dtype=dtype)
        for c, grp in enumerate(groups):
            proj[c, grp] = 1.0 / len(grp)
        self.proj = proj

    @property
    def params(self) -> list[Parameter]:
        return []

    def forward(self, grid: np.ndarray, training: bool):
        out, cache = pointwise_conv2d(grid, self.proj, np.zeros(self.proj.shape[0],
                                                                dtype=self.proj.dtype))
        return out, cache

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        dgrid, _, _ = pointwise_conv2d_backward(dout, cache)
        return dgrid
