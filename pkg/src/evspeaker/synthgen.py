"""Deterministic synthetic event-stream generator.

Produces desk-scale stand-ins for lip-articulation recordings: each sample
simulates an opening and closing elliptical mouth boundary plus a chin edge
over 3 seconds on a 200 x 160 grid. Events fire where those boundaries
move; the leading (opening) edge emits positive polarity and the trailing
(closing) edge negative.

Subject identity lives in five motion parameters (oscillation frequency,
aperture amplitude, width-to-height aspect, chin offset, event rate) placed
on a jittered mixed-radix lattice, so any two subjects differ in at least
one parameter by a fixed margin. Digits select one of ten fixed articulation
templates (burst timing and openness), which vary samples within a subject
without carrying identity.

Four scene transforms mimic capture conditions: ``frontal`` is identity,
``view45`` compresses and shears horizontally, ``view90`` collapses the
horizontal axis almost completely (orthogonal views are intentionally
near-degenerate), and ``lowlight`` keeps a 0.35 fraction of true events and
injects uniform polarity-balanced noise.

The whole dataset is a pure function of (seed, config): base event
synthesis is keyed by (seed, subject, digit, repetition) so that scene
variants of the same utterance share their underlying motion, and the scene
transform draws from its own (seed, subject, digit, scene, repetition)
stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .events import (
    EventStream,
    ManifestEntry,
    SensorGeometry,
    StreamMeta,
    save_manifest,
    save_stream,
)
from .rng import derive_rng

SCENES = ("frontal", "view45", "view90", "lowlight")

GEOMETRY = SensorGeometry(200, 160)
DURATION_US = 3_000_000
_STEP_US = 1000                      # simulation step: 1 ms
_LOWLIGHT_KEEP = 0.35
_LOWLIGHT_NOISE_PER_MS = 0.8
_VIEW45_SCALE = 0.707
_VIEW45_SHEAR = 0.18
_VIEW90_SCALE = 0.12

# Subject parameter lattice: the strided level assignment below keeps any
# two of the first 60 subjects at least one full level apart in some
# parameter, and the jitter (12% of a level step) cannot close that gap.
_FREQ_LEVELS = (1.6, 2.2, 2.8, 3.4, 4.0)        # Hz
_AMP_LEVELS = (20.0, 27.0, 34.0, 41.0)          # px
_ASPECT_LEVELS = (1.00, 1.22, 1.44)             # rx / ry ratio scale
_CHIN_LEVELS = (6.0, 14.0, 22.0)                # px below the lip ellipse
_RATE_LEVELS = (1.9, 2.2, 2.5)                  # events / ms (kept narrow: event
                                                # count is a fragile identity cue)
_LEVEL_STRIDES = (1, 3, 2, 2, 2)                # coprime walks over the levels

# Articulation templates per digit: bursts of (onset, duration, openness,
# widening), all as fractions of the sample.
DIGIT_TEMPLATES = (
    ((0.10, 0.45, 1.00, 0.40), (0.60, 0.25, 0.55, 0.80)),
    ((0.15, 0.30, 0.80, 0.20),),
    ((0.10, 0.25, 0.70, 0.50), (0.45, 0.35, 0.95, 0.30)),
    ((0.08, 0.60, 0.90, 0.60),),
    ((0.12, 0.22, 0.65, 0.90), (0.40, 0.20, 0.75, 0.50), (0.68, 0.22, 0.85, 0.30)),
    ((0.10, 0.50, 1.00, 0.70), (0.68, 0.20, 0.60, 0.20)),
    ((0.15, 0.40, 0.75, 0.35), (0.62, 0.28, 0.90, 0.55)),
    ((0.08, 0.28, 0.95, 0.45), (0.42, 0.30, 0.70, 0.75)),
    ((0.10, 0.35, 0.85, 0.55), (0.55, 0.35, 0.85, 0.55)),
    ((0.12, 0.55, 0.70, 0.80),),
)


@dataclass(frozen=True)
class SubjectModel:
    freq_hz: float
    amplitude_px: float
    aspect: float
    chin_offset_px: float
    rate_per_ms: float


def subject_model(seed: int, subject: int) -> SubjectModel:
    """Deterministic subject parameters from the jittered lattice."""
    rng = derive_rng(seed, "subject", subject)
    values = []
    all_levels = (_FREQ_LEVELS, _AMP_LEVELS, _ASPECT_LEVELS, _CHIN_LEVELS, _RATE_LEVELS)
    for levels, stride in zip(all_levels, _LEVEL_STRIDES):
        step = levels[1] - levels[0]
        jitter = float(rng.uniform(-0.12, 0.12)) * step
        values.append(levels[(subject * stride) % len(levels)] + jitter)
    return SubjectModel(
        freq_hz=values[0],
        amplitude_px=values[1],
        aspect=values[2],
        chin_offset_px=values[3],
        rate_per_ms=values[4],
    )


def _burst_envelope(frac: np.ndarray, bursts, column: int) -> np.ndarray:
    env = np.zeros_like(frac)
    for burst in bursts:
        onset, dur = burst[0], burst[1]
        scale = burst[column]
        phase = (frac - onset) / dur
        active = (phase >= 0.0) & (phase <= 1.0)
        env += np.where(active, scale * np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    return env


def _base_events(model: SubjectModel, digit: int, rng: np.random.Generator):
    """Synthesize the raw (x, y, t, p) columns for one articulation."""
    steps = DURATION_US // _STEP_US
    t_s = np.arange(steps, dtype=np.float64) * (_STEP_US * 1e-6)
    frac = t_s / (DURATION_US * 1e-6)
    bursts = DIGIT_TEMPLATES[digit % len(DIGIT_TEMPLATES)]

    phase = float(rng.uniform(0, 2 * np.pi))
    osc = 0.55 + 0.45 * np.sin(2 * np.pi * model.freq_hz * t_s + phase)
    open_env = _burst_envelope(frac, bursts, column=2)
    wide_env = _burst_envelope(frac, bursts, column=3)
    ry = model.amplitude_px * open_env * osc
    # mouth width is a static trait: only weakly modulated by articulation
    rx = model.amplitude_px * model.aspect * (0.70 + 0.15 * wide_env)
    cx = 100.0 + float(rng.uniform(-3, 3))
    cy = 72.0 + float(rng.uniform(-3, 3))
    chin_y = cy + 0.8 * ry + model.chin_offset_px

    dry = np.gradient(ry)
    drx = np.gradient(rx)
    dchin = np.gradient(chin_y)
    weight = 0.15 + np.abs(dry) + 0.4 * np.abs(drx) + 0.35 * np.abs(dchin)
    # halved here because every seed event is emitted as a 2-pixel pair
    rate = 0.5 * model.rate_per_ms * weight / weight.mean()
    counts = np.diff(np.floor(np.cumsum(rate)), prepend=0.0).astype(np.int64)

    total = int(counts.sum())
    step_idx = np.repeat(np.arange(steps), counts)
    on_ring = rng.random(total) < 0.75
    theta = rng.uniform(0.0, 2 * np.pi, size=total)
    jitter_x = rng.normal(0.0, 0.7, size=total)
    jitter_y = rng.normal(0.0, 0.7, size=total)
    chin_u = rng.uniform(-0.8, 0.8, size=total)

    x = np.where(
        on_ring,
        cx + rx[step_idx] * np.cos(theta),
        cx + chin_u * rx[step_idx],
    ) + jitter_x
    y = np.where(
        on_ring,
        cy + ry[step_idx] * np.sin(theta),
        chin_y[step_idx],
    ) + jitter_y

    polarity = np.where(dry[step_idx] >= 0.0, 1, -1).astype(np.int64)
    flips = rng.random(total) < 0.05
    polarity = np.where(flips, -polarity, polarity)

    t_us = step_idx.astype(np.int64) * _STEP_US + rng.integers(0, _STEP_US, size=total)

    xi = np.round(x).astype(np.int64)
    yi = np.round(y).astype(np.int64)

    # Moving edges excite small contiguous pixel patches, not isolated
    # pixels: pair each event with an edge-adjacent companion at the same
    # millisecond so genuine activity is spatiotemporally coherent.
    side = rng.random(total) < 0.5
    xj = xi + np.where(side, 1, 0)
    yj = yi + np.where(side, 0, 1)
    tj = step_idx.astype(np.int64) * _STEP_US + rng.integers(0, _STEP_US, size=total)
    xi = np.concatenate([xi, xj])
    yi = np.concatenate([yi, yj])
    t_us = np.concatenate([t_us, tj])
    polarity = np.concatenate([polarity, polarity])

    keep = (xi >= 0) & (xi < GEOMETRY.width) & (yi >= 0) & (yi < GEOMETRY.height)
    return xi[keep], yi[keep], t_us[keep], polarity[keep]


def _apply_scene(x, y, t, p, scene: str, rng: np.random.Generator):
    cx = GEOMETRY.width / 2.0
    cy = GEOMETRY.height / 2.0
    if scene == "frontal":
        return x, y, t, p
    if scene == "view45":
        xs = np.round(cx + (x - cx) * _VIEW45_SCALE + _VIEW45_SHEAR * (y - cy)).astype(np.int64)
        keep = (xs >= 0) & (xs < GEOMETRY.width)
        return xs[keep], y[keep], t[keep], p[keep]
    if scene == "view90":
        xs = np.round(cx + (x - cx) * _VIEW90_SCALE).astype(np.int64)
        keep = (xs >= 0) & (xs < GEOMETRY.width)
        return xs[keep], y[keep], t[keep], p[keep]
    if scene == "lowlight":
        keep = rng.random(len(x)) < _LOWLIGHT_KEEP
        x, y, t, p = x[keep], y[keep], t[keep], p[keep]
        n_noise = int(_LOWLIGHT_NOISE_PER_MS * (DURATION_US // _STEP_US))
        nx = rng.integers(0, GEOMETRY.width, size=n_noise)
        ny = rng.integers(0, GEOMETRY.height, size=n_noise)
        nt = rng.integers(0, DURATION_US, size=n_noise)
        half = n_noise // 2
        np_pol = np.concatenate([
            np.ones(half, dtype=np.int64),
            -np.ones(n_noise - half, dtype=np.int64),
        ])
        np_pol = np_pol[rng.permutation(n_noise)]
        return (
            np.concatenate([x, nx]),
            np.concatenate([y, ny]),
            np.concatenate([t, nt]),
            np.concatenate([p, np_pol]),
        )
    raise ValueError(f"unknown scene kind {scene!r}")


def generate_sample(
    subject: int, digit: int, scene: str, seed: int, repetition: int = 0
) -> EventStream:
    """One synthetic articulation sample as an event stream."""
    if scene not in SCENES:
        raise ValueError(f"unknown scene kind {scene!r}; expected one of {SCENES}")
    model = subject_model(seed, subject)
    base_rng = derive_rng(seed, "sample", subject, digit, repetition)
    x, y, t, p = _base_events(model, digit, base_rng)
    scene_rng = derive_rng(seed, "scene", subject, digit, scene, repetition)
    x, y, t, p = _apply_scene(x, y, t, p, scene, scene_rng)
    meta = StreamMeta(subject=subject, digit=digit, scene=scene, duration_us=DURATION_US)
    return EventStream(x, y, t, p, GEOMETRY, meta)


def generate_dataset(
    out_dir,
    subjects: int = 10,
    reps_per_digit: int = 4,
    scenes: Sequence[str] = SCENES,
    seed: int = 0,
    digits: Sequence[int] = tuple(range(10)),
) -> list[ManifestEntry]:
    """Write EVB sample files plus a JSON-lines manifest; returns the entries.

    The default desk scale is 10 subjects x 10 digits x 4 repetitions per
    scene, i.e. 400 samples per scene.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene in scenes:
        for subject in range(subjects):
            for digit in digits:
                for rep in range(reps_per_digit):
                    stream = generate_sample(subject, digit, scene, seed, rep)
                    name = f"s{subject:02d}_d{digit}_r{rep}_{scene}.evb"
                    save_stream(stream, out_dir / name)
                    entries.append(
                        ManifestEntry(
                            file=name,
                            subject=subject,
                            digit=digit,
                            scene=scene,
                            duration_us=DURATION_US,
                        )
                    )
    save_manifest(entries, out_dir / "manifest.jsonl")
    return entries
