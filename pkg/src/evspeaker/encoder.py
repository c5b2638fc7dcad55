"""Temporal-aware voxel encoding of event streams.

The encoder turns a stream into a dense polarity-split voxel grid of shape
(2B, H, W): channels [0, B) hold the negative-polarity bins and [B, 2B) the
positive ones, bin-major within each half. Stages, in order:

1. timestamps are normalized to [0, 1];
2. each event gets per-bin temporal offsets ``delta[i, b] = t_i - b/B``
   (zero-based b) and a learnable allocation weight per bin, produced by a
   small MLP from (scale * delta, normalized bin index) - or, in oracle
   mode, by a fixed 0/1 indicator that reproduces classic hard binning;
3. weights are scattered into the grid by pixel and polarity;
4. local spatial aggregation adds each voxel's down and right neighbor
   (snapshot semantics: all reads see the pre-update grid);
5. temporal channel reweighting scales each channel by a sigmoid gate
   computed from the globally pooled channel descriptor.

Everything after the raw stream is differentiable; gradients reach the
scale, the MLP, and the gate's convolution through the scatter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, SensorGeometry, normalize_time
from .kernels import (
    Dense2,
    Parameter,
    conv1d_channels,
    conv1d_channels_backward,
    gap2d,
    gap2d_backward,
    sigmoid,
    sigmoid_backward,
    uniform_param,
    zeros_param,
)


@dataclass(frozen=True)
class TveConfig:
    bins: int = 16
    geometry: SensorGeometry = SensorGeometry(200, 160)

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")


def temporal_offsets(t_norm: np.ndarray, bins: int) -> np.ndarray:
    """Per-event offsets to each bin start: delta[i, b] = t_i - b/B (b zero-based)."""
    starts = np.arange(bins, dtype=np.float64) / bins
    return t_norm[:, None] - starts[None, :]


def bin_features(bins: int, dtype=np.float64) -> np.ndarray:
    """Bin index normalized to [0, 1]; a single bin maps to 0."""
    if bins == 1:
        return np.zeros(1, dtype=dtype)
    return (np.arange(bins, dtype=dtype) / (bins - 1)).astype(dtype)


def indicator_weights(delta: np.ndarray, bins: int) -> np.ndarray:
    """Hard-assignment oracle: weight 1 where 0 <= delta < 1/B, else 0.

    The last bin is closed on the right so an event at normalized time 1.0
    still lands in bin B-1.
    """
    width = 1.0 / bins
    w = ((delta >= 0.0) & (delta < width)).astype(delta.dtype)
    w[:, bins - 1] = ((delta[:, bins - 1] >= 0.0) & (delta[:, bins - 1] <= width)).astype(
        delta.dtype
    )
    return w


def accumulate(
    x: np.ndarray,
    y: np.ndarray,
    polarity: np.ndarray,
    w: np.ndarray,
    bins: int,
    geometry: SensorGeometry,
    dtype=np.float32,
) -> np.ndarray:
    """Scatter per-event bin weights into the (2B, H, W) grid.

    Summation runs in event order (bincount), so the result is independent
    of thread count and identical across runs.
    """
    gw, gh = geometry.width, geometry.height
    grid_size = 2 * bins * gh * gw
    if len(x) == 0:
        return np.zeros((2 * bins, gh, gw), dtype=dtype)
    alpha = (polarity > 0).astype(np.int64)
    pix = y.astype(np.int64) * gw + x.astype(np.int64)
    base = (alpha * bins)[:, None] + np.arange(bins, dtype=np.int64)[None, :]
    flat = base * (gh * gw) + pix[:, None]
    grid = np.bincount(flat.ravel(), weights=w.ravel().astype(np.float64),
                       minlength=grid_size)
    return grid.reshape(2 * bins, gh, gw).astype(dtype)


def accumulate_backward(
    dgrid: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    polarity: np.ndarray,
    bins: int,
) -> np.ndarray:
    """Gather the grid gradient back onto the per-event weight matrix."""
    alpha = (polarity > 0).astype(np.int64)
    chan = (alpha * bins)[:, None] + np.arange(bins, dtype=np.int64)[None, :]
    return dgrid[chan, y.astype(np.int64)[:, None], x.astype(np.int64)[:, None]]


def lsa(grid: np.ndarray) -> np.ndarray:
    """Add each voxel's down and right neighbor (out of bounds contributes 0)."""
    out = grid.copy()
    out[..., :-1, :] += grid[..., 1:, :]
    out[..., :, :-1] += grid[..., :, 1:]
    return out


def lsa_backward(dout: np.ndarray) -> np.ndarray:
    dgrid = dout.copy()
    dgrid[..., 1:, :] += dout[..., :-1, :]
    dgrid[..., :, 1:] += dout[..., :, :-1]
    return dgrid


class TemporalVoxelEncoder:
    """Owns the encoder's learnable state and wires the full chain."""

    def __init__(
        self,
        cfg: TveConfig,
        rng: np.random.Generator,
        dtype=np.float32,
        tcr_kernel: int = 1,
        oracle: bool = False,
    ):
        self.cfg = cfg
        self.dtype = dtype
        self.oracle = oracle
        self.scale = Parameter("tve.scale", np.array(1.0, dtype=dtype))
        self.mlp = Dense2(rng, hidden=32, name="tve.mlp", dtype=dtype)
        self.tcr_w = uniform_param("tve.tcr.weight", (tcr_kernel,), tcr_kernel, rng, dtype)
        self.tcr_b = zeros_param("tve.tcr.bias", (1,), dtype)

    @property
    def params(self) -> list[Parameter]:
        if self.oracle:
            return [self.tcr_w, self.tcr_b]
        return [self.scale, *self.mlp.params, self.tcr_w, self.tcr_b]

    def lta_weights(self, delta: np.ndarray):
        """Allocation weights for an offset matrix, with backward cache."""
        n, bins = delta.shape
        delta = delta.astype(self.dtype)
        if self.oracle:
            return indicator_weights(delta, bins), None
        feats = np.empty((n * bins, 2), dtype=self.dtype)
        feats[:, 0] = (self.scale.value * delta).ravel()
        feats[:, 1] = np.broadcast_to(bin_features(bins, self.dtype), (n, bins)).ravel()
        w_flat, mlp_cache = self.mlp.forward(feats)
        return w_flat.reshape(n, bins).astype(self.dtype), (delta, mlp_cache)

    def lta_backward(self, dw: np.ndarray, cache) -> None:
        if self.oracle:
            return
        delta, mlp_cache = cache
        dfeats = self.mlp.backward(dw.ravel(), mlp_cache)
        du = dfeats[:, 0].reshape(delta.shape)
        self.scale.grad += (du * delta).sum()

    def tcr(self, grid: np.ndarray):
        """Sigmoid channel gate from the pooled descriptor; scales each channel."""
        z, gap_cache = gap2d(grid)
        pre, conv_cache = conv1d_channels(z, self.tcr_w.value, float(self.tcr_b.value[0]))
        gate, sig_cache = sigmoid(pre)
        out = grid * gate[..., :, None, None]
        return out, (grid, gate, sig_cache, conv_cache, gap_cache)

    def tcr_backward(self, dout: np.ndarray, cache) -> np.ndarray:
        grid, gate, sig_cache, conv_cache, gap_cache = cache
        dgrid = dout * gate[..., :, None, None]
        dgate = np.einsum("...chw,...chw->...c", dout, grid)
        dpre = sigmoid_backward(dgate, sig_cache)
        dz, dw, db = conv1d_channels_backward(dpre, conv_cache)
        self.tcr_w.grad += dw
        self.tcr_b.grad[0] += db
        dgrid += gap2d_backward(dz, gap_cache)
        return dgrid

    def encode(self, stream: EventStream):
        """Full chain for one stream; returns (V_att, cache)."""
        bins = self.cfg.bins
        gw, gh = self.cfg.geometry
        if (stream.geometry.width, stream.geometry.height) != (gw, gh):
            raise ValueError(
                f"stream geometry {stream.geometry} does not match encoder "
                f"geometry {self.cfg.geometry}"
            )
        if len(stream) == 0:
            return np.zeros((2 * bins, gh, gw), dtype=self.dtype), None
        t_norm = normalize_time(stream)
        delta = temporal_offsets(t_norm, bins)
        w, lta_cache = self.lta_weights(delta)
        pre = accumulate(stream.x, stream.y, stream.p, w, bins, self.cfg.geometry,
                         self.dtype)
        agg = lsa(pre)
        out, tcr_cache = self.tcr(agg)
        return out, (stream, lta_cache, tcr_cache)

    def backward(self, dout: np.ndarray, cache) -> None:
        if cache is None:
            return
        stream, lta_cache, tcr_cache = cache
        dagg = self.tcr_backward(dout, tcr_cache)
        dpre = lsa_backward(dagg)
        dw = accumulate_backward(dpre, stream.x, stream.y, stream.p, self.cfg.bins)
        self.lta_backward(dw, lta_cache)

    def encode_batch(self, streams: list[EventStream]):
        """Batched chain: one MLP call and one scatter over all samples.

        Mathematically identical to stacking per-sample ``encode`` outputs.
        """
        bins = self.cfg.bins
        gw, gh = self.cfg.geometry
        n = len(streams)
        deltas = []
        sample_idx = []
        for k, stream in enumerate(streams):
            if (stream.geometry.width, stream.geometry.height) != (gw, gh):
                raise ValueError(
                    f"stream geometry {stream.geometry} does not match encoder "
                    f"geometry {self.cfg.geometry}"
                )
            if len(stream) == 0:
                continue
            deltas.append(temporal_offsets(normalize_time(stream), bins))
            sample_idx.append(np.full(len(stream), k, dtype=np.int64))
        if not deltas:
            zeros = np.zeros((n, 2 * bins, gh, gw), dtype=self.dtype)
            out, tcr_cache = self.tcr(zeros)
            return out, (None, None, tcr_cache, None)
        delta = np.concatenate(deltas, axis=0)
        sample_idx = np.concatenate(sample_idx)
        x = np.concatenate([s.x for s in streams if len(s)]).astype(np.int64)
        y = np.concatenate([s.y for s in streams if len(s)]).astype(np.int64)
        p = np.concatenate([s.p for s in streams if len(s)]).astype(np.int64)

        w, lta_cache = self.lta_weights(delta)
        alpha = (p > 0).astype(np.int64)
        chan = (alpha * bins)[:, None] + np.arange(bins, dtype=np.int64)[None, :]
        flat = (sample_idx[:, None] * (2 * bins) + chan) * (gh * gw) + (y * gw + x)[:, None]
        grid = np.bincount(flat.ravel(), weights=w.ravel().astype(np.float64),
                           minlength=n * 2 * bins * gh * gw)
        pre = grid.reshape(n, 2 * bins, gh, gw).astype(self.dtype)
        agg = lsa(pre)
        out, tcr_cache = self.tcr(agg)
        return out, ((sample_idx, chan, y, x), lta_cache, tcr_cache, n)

    def backward_batch(self, dout: np.ndarray, cache) -> None:
        scatter, lta_cache, tcr_cache, _ = cache
        dagg = self.tcr_backward(dout, tcr_cache)
        if scatter is None:
            return
        dpre = lsa_backward(dagg)
        sample_idx, chan, y, x = scatter
        dw = dpre[sample_idx[:, None], chan, y[:, None], x[:, None]]
        self.lta_backward(dw, lta_cache)
