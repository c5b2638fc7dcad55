"""Event-level denoising and training-time augmentation.

The denoiser keeps an event only if some other event sits on one of its four
edge-adjacent pixels within a +/- t_f microsecond window (polarity is
ignored). Augmentation is a fixed sequence applied to training samples only:
random integer translation, horizontal mirroring, then event sparsification
on a configurable fraction of samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, SensorGeometry
from .rng import derive_rng


@dataclass(frozen=True)
class DenoiseConfig:
    """Temporal support window for the neighbor test, in microseconds."""

    t_f_us: int = 10_000

    def __post_init__(self):
        if self.t_f_us <= 0:
            raise ValueError("t_f_us must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    max_shift: int = 20
    mirror_prob: float = 0.5
    sparsify_prob: float = 0.30
    drop_ratio_range: tuple[float, float] = (0.4, 0.7)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mirror_prob <= 1.0 and 0.0 <= self.sparsify_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        lo, hi = self.drop_ratio_range
        if not (0.0 <= lo <= hi < 1.0):
            raise ValueError("drop_ratio_range must satisfy 0 <= lo <= hi < 1")
        if self.max_shift < 0:
            raise ValueError("max_shift must be non-negative")


def denoise(stream: EventStream, cfg: DenoiseConfig = DenoiseConfig()) -> EventStream:
    """Drop events with no 4-connected neighbor within the temporal window.

    The neighbor test quantifies over the *input* stream, which makes the
    filter idempotent: if event i is kept thanks to j, then j is kept thanks
    to i, so the retained set supports itself.

    Runs in O(N log N): events are keyed by (pixel, time) into one sorted
    composite array and each of the four neighbor pixels is probed with a
    binary search over its contiguous block.
    """
    n = len(stream)
    if n == 0:
        return stream
    w, h = stream.geometry
    tf = int(cfg.t_f_us)

    t_rel = (stream.t - stream.t[0]).astype(np.int64)
    block = int(t_rel[-1]) + tf + 1  # per-pixel value range, collision-free
    if (w * h) * block >= 2 ** 62:
        raise ValueError("stream duration too large for composite-key denoise")

    x = stream.x.astype(np.int64)
    y = stream.y.astype(np.int64)
    key = y * w + x
    comp = np.sort(key * block + t_rel)

    keep = np.zeros(n, dtype=bool)
    lo_t = np.maximum(t_rel - (tf - 1), 0)
    hi_t = t_rel + (tf - 1)  # < block - 1, so stays inside the neighbor block
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nx = x + dx
        ny = y + dy
        valid = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
        nbase = (ny * w + nx) * block
        lo = np.searchsorted(comp, nbase + lo_t, side="left")
        in_range = lo < n
        hit = np.zeros(n, dtype=bool)
        hit[in_range] = comp[np.minimum(lo[in_range], n - 1)] <= (nbase + hi_t)[in_range]
        keep |= valid & hit

    return EventStream(
        stream.x[keep], stream.y[keep], stream.t[keep], stream.p[keep],
        stream.geometry, stream.meta,
    )


def translate(
    stream: EventStream, dx: int, dy: int, geometry: SensorGeometry | None = None
) -> EventStream:
    """Shift coordinates by integer offsets, dropping events that leave the frame."""
    geometry = geometry or stream.geometry
    x = stream.x.astype(np.int64) + int(dx)
    y = stream.y.astype(np.int64) + int(dy)
    keep = (x >= 0) & (x < geometry.width) & (y >= 0) & (y < geometry.height)
    return EventStream(
        x[keep], y[keep], stream.t[keep], stream.p[keep], geometry, stream.meta
    )


def mirror(
    stream: EventStream,
    geometry: SensorGeometry | None = None,
    u: float = 0.0,
    threshold: float = 0.5,
) -> EventStream:
    """Horizontally mirror the stream when the draw u falls below threshold."""
    geometry = geometry or stream.geometry
    if u >= threshold:
        return stream
    x = geometry.width - 1 - stream.x.astype(np.int64)
    keep = (x >= 0) & (x < geometry.width)  # vacuous for in-bounds input
    return EventStream(
        x[keep], stream.y[keep], stream.t[keep], stream.p[keep], geometry, stream.meta
    )


def sparsify(stream: EventStream, r: float, rng: np.random.Generator) -> EventStream:
    """Keep a uniform random subset of floor(N * (1 - r)) events, time order intact."""
    n = len(stream)
    target = int(np.floor(n * (1.0 - r)))
    if target >= n:
        return stream
    idx = rng.choice(n, size=target, replace=False)
    idx.sort()
    return EventStream(
        stream.x[idx], stream.y[idx], stream.t[idx], stream.p[idx],
        stream.geometry, stream.meta,
    )


def augment(
    stream: EventStream, cfg: AugmentConfig, rng: np.random.Generator
) -> EventStream:
    """Apply translation, mirroring and sparsification in that fixed order.

    Sparsification hits a sample with probability ``cfg.sparsify_prob``; its
    drop ratio is drawn uniformly from ``cfg.drop_ratio_range``. All draws
    come from ``rng`` in a fixed order, so a fixed generator state gives a
    byte-identical result.
    """
    geometry = stream.geometry
    dx = int(rng.integers(-cfg.max_shift, cfg.max_shift + 1))
    dy = int(rng.integers(-cfg.max_shift, cfg.max_shift + 1))
    out = translate(stream, dx, dy, geometry)
    out = mirror(out, geometry, u=float(rng.random()), threshold=cfg.mirror_prob)
    if float(rng.random()) < cfg.sparsify_prob:
        r = float(rng.uniform(cfg.drop_ratio_range[0], cfg.drop_ratio_range[1]))
        out = sparsify(out, r, rng)
    return out


def sample_rng(cfg: AugmentConfig, epoch: int, sample_index: int) -> np.random.Generator:
    """Derive the per-sample augmentation generator.

    Keyed on (seed, epoch, sample index) so samples can be augmented in any
    order, in parallel, and still reproduce exactly.
    """
    return derive_rng(cfg.seed, "augment", epoch, sample_index)
