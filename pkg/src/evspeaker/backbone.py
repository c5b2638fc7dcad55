"""Residual classification backbone.

A four-stage residual network whose stem is adapted for dense event
features: a 3x3 stride-1 convolution on C input channels and no early
pooling, so the first stage sees the full spatial resolution. Stages
double the width and halve the resolution (stride-2 first block) from the
second stage on; a global average pool and a linear head produce the
per-subject logits.

The desk-scale default is one block per stage at base width 16 (~0.3M
parameters); ``blocks=(3, 4, 6, 3)`` with ``base_width=64`` gives the
full-scale layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    BatchNorm2d,
    Parameter,
    conv2d,
    conv2d_backward,
    gap2d,
    gap2d_backward,
    linear,
    linear_backward,
    relu,
    relu_backward,
    uniform_param,
    zeros_param,
)


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int
    num_classes: int
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    base_width: int = 16

    def __post_init__(self):
        if len(self.blocks) < 1 or any(b < 1 for b in self.blocks):
            raise ValueError("each stage needs at least one block")


class _ConvBn:
    """Convolution followed by batch norm; no conv bias (BN would cancel it)."""

    def __init__(self, name, cin, cout, kernel, stride, rng, dtype):
        fan_in = cin * kernel * kernel
        self.w = uniform_param(f"{name}.weight", (cout, cin, kernel, kernel),
                               fan_in, rng, dtype)
        self._zero_bias = np.zeros(cout, dtype=dtype)
        self.bn = BatchNorm2d(cout, name=f"{name}.bn", dtype=dtype)
        self.stride = stride
        self.pad = (kernel - 1) // 2

    @property
    def params(self):
        return [self.w, *self.bn.params]

    def forward(self, x, training):
        y, conv_cache = conv2d(x, self.w.value, self._zero_bias, self.stride, self.pad)
        out, bn_cache = self.bn.forward(y, training)
        return out, (conv_cache, bn_cache)

    def backward(self, dout, cache):
        conv_cache, bn_cache = cache
        dy = self.bn.backward(dout, bn_cache)
        dx, dw, _ = conv2d_backward(dy, conv_cache)
        self.w.grad += dw
        return dx


class BasicBlock:
    """conv-bn-relu-conv-bn plus identity (or projected) skip, then relu."""

    def __init__(self, name, cin, cout, stride, rng, dtype):
        self.conv1 = _ConvBn(f"{name}.conv1", cin, cout, 3, stride, rng, dtype)
        self.conv2 = _ConvBn(f"{name}.conv2", cout, cout, 3, 1, rng, dtype)
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = _ConvBn(f"{name}.proj", cin, cout, 1, stride, rng, dtype)

    @property
    def params(self):
        out = [*self.conv1.params, *self.conv2.params]
        if self.proj is not None:
            out += self.proj.params
        return out

    def forward(self, x, training):
        h1, c1 = self.conv1.forward(x, training)
        a1, m1 = relu(h1)
        h2, c2 = self.conv2.forward(a1, training)
        if self.proj is not None:
            skip, cp = self.proj.forward(x, training)
        else:
            skip, cp = x, None
        out, m2 = relu(h2 + skip)
        return out, (c1, m1, c2, cp, m2)

    def backward(self, dout, cache):
        c1, m1, c2, cp, m2 = cache
        dsum = relu_backward(dout, m2)
        da1 = self.conv2.backward(dsum, c2)
        dh1 = relu_backward(da1, m1)
        dx = self.conv1.backward(dh1, c1)
        if self.proj is not None:
            dx = dx + self.proj.backward(dsum, cp)
        else:
            dx = dx + dsum
        return dx


class ResidualBackbone:
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        width = cfg.base_width
        self.stem = _ConvBn("backbone.stem", cfg.in_channels, width, 3, 1, rng, dtype)
        self.stages: list[list[BasicBlock]] = []
        cin = width
        for s, count in enumerate(cfg.blocks):
            cout = width * (2 ** s)
            stage = []
            for b in range(count):
                stride = 2 if (s > 0 and b == 0) else 1
                stage.append(
                    BasicBlock(f"backbone.s{s}.b{b}", cin, cout, stride, rng, dtype)
                )
                cin = cout
            self.stages.append(stage)
        self.head_w = uniform_param("backbone.head.weight", (cfg.num_classes, cin),
                                    cin, rng, dtype)
        self.head_b = zeros_param("backbone.head.bias", (cfg.num_classes,), dtype)

    @property
    def params(self) -> list[Parameter]:
        out = list(self.stem.params)
        for stage in self.stages:
            for block in stage:
                out += block.params
        out += [self.head_w, self.head_b]
        return out

    def batchnorms(self) -> list[BatchNorm2d]:
        out = [self.stem.bn]
        for stage in self.stages:
            for block in stage:
                out.append(block.conv1.bn)
                out.append(block.conv2.bn)
                if block.proj is not None:
                    out.append(block.proj.bn)
        return out

    def forward(self, x: np.ndarray, training: bool):
        h, stem_cache = self.stem.forward(x, training)
        h, stem_mask = relu(h)
        block_caches = []
        for stage in self.stages:
            for block in stage:
                h, cache = block.forward(h, training)
                block_caches.append(cache)
        feat, gap_cache = gap2d(h)
        logits, lin_cache = linear(feat, self.head_w.value, self.head_b.value)
        return logits, (stem_cache, stem_mask, block_caches, gap_cache, lin_cache)

    def backward(self, dlogits: np.ndarray, cache) -> np.ndarray:
        stem_cache, stem_mask, block_caches, gap_cache, lin_cache = cache
        dfeat, dw, db = linear_backward(dlogits, lin_cache)
        self.head_w.grad += dw
        self.head_b.grad += db
        dh = gap2d_backward(dfeat, gap_cache)
        i = len(block_caches) - 1
        for stage in reversed(self.stages):
            for block in reversed(stage):
                dh = block.backward(dh, block_caches[i])
                i -= 1
        dh = relu_backward(dh, stem_mask)
        return self.stem.backward(dh, stem_cache)
