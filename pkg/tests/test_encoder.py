import numpy as np
import pytest

from evspeaker.encoder import (
    TemporalVoxelEncoder,
    TveConfig,
    accumulate,
    accumulate_backward,
    bin_features,
    indicator_weights,
    lsa,
    lsa_backward,
    temporal_offsets,
)
from evspeaker.events import EventStream, SensorGeometry, normalize_time
from evspeaker.preprocess import mirror
from evspeaker.rng import derive_rng

GEO = SensorGeometry(8, 6)


def histogram_voxelize(stream, bins):
    """Independent hard-binning oracle: per-bin event counting."""
    gw, gh = stream.geometry
    grid = np.zeros((2 * bins, gh, gw), dtype=np.float64)
    t_norm = normalize_time(stream)
    for i in range(len(stream)):
        b = int(np.floor(t_norm[i] * bins))
        if b == bins:  # right-closed last bin
            b = bins - 1
        alpha = 1 if stream.p[i] > 0 else 0
        grid[alpha * bins + b, stream.y[i], stream.x[i]] += 1.0
    return grid


def random_stream(rng, n, geometry=GEO, pow2_duration=True):
    duration = 2 ** 20 if pow2_duration else int(rng.integers(1000, 1_000_000))
    x = rng.integers(0, geometry.width, n)
    y = rng.integers(0, geometry.height, n)
    t = np.sort(rng.integers(0, duration + 1, n))
    if n:
        t[0], t[-1] = 0, duration  # pin the span so bin edges stay exact
    p = rng.choice([-1, 1], n)
    return EventStream(x, y, t, p, geometry)


def test_temporal_offsets_examples():
    delta = temporal_offsets(np.array([0.0]), 4)
    assert delta[0, 0] == 0.0
    delta = temporal_offsets(np.array([0.5]), 4)
    assert np.isclose(delta[0, 2], 0.0)  # bin index 3 in one-based terms
    rng = np.random.default_rng(0)
    delta = temporal_offsets(rng.random(50), 8)
    diffs = delta[:, :-1] - delta[:, 1:]
    assert np.allclose(diffs, 1.0 / 8.0)


def test_bin_features_normalized():
    assert np.allclose(bin_features(5), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.array_equal(bin_features(1), [0.0])


def test_indicator_weights_partition():
    rng = np.random.default_rng(1)
    t = rng.random(200)
    t[0], t[1] = 0.0, 1.0
    for bins in (1, 2, 5, 8):
        w = indicator_weights(temporal_offsets(t, bins), bins)
        assert np.array_equal(w.sum(axis=1), np.ones(200))  # exactly one bin each


def test_indicator_right_closed_last_bin():
    w = indicator_weights(temporal_offsets(np.array([1.0]), 4), 4)
    assert np.array_equal(w[0], [0, 0, 0, 1])


def test_accumulate_single_event():
    bins = 2
    x = np.array([1]); y = np.array([1]); p = np.array([1])
    w = np.array([[0.3, 0.7]])
    grid = accumulate(x, y, p, w, bins, SensorGeometry(4, 4), dtype=np.float64)
    assert grid.shape == (4, 4, 4)
    assert grid[2, 1, 1] == 0.3 and grid[3, 1, 1] == 0.7
    assert grid.sum() == 1.0


def test_accumulate_additivity():
    bins = 2
    x = np.array([1, 1]); y = np.array([1, 1]); p = np.array([1, 1])
    w = np.tile([0.3, 0.7], (2, 1))
    grid = accumulate(x, y, p, w, bins, SensorGeometry(4, 4), dtype=np.float64)
    assert grid[2, 1, 1] == 0.6 and grid[3, 1, 1] == 1.4


def test_accumulate_mass_bookkeeping():
    rng = np.random.default_rng(2)
    for _ in range(10):
        s = random_stream(rng, 500)
        w = rng.normal(size=(500, 4))
        grid = accumulate(s.x, s.y, s.p, w, 4, GEO, dtype=np.float64)
        assert np.isclose(grid.sum(), w.sum(), rtol=1e-10)


def test_accumulate_backward_gathers():
    rng = np.random.default_rng(3)
    s = random_stream(rng, 50)
    dgrid = rng.normal(size=(8, GEO.height, GEO.width))
    dw = accumulate_backward(dgrid, s.x, s.y, s.p, 4)
    i = 7
    alpha = 1 if s.p[i] > 0 else 0
    for b in range(4):
        assert dw[i, b] == dgrid[alpha * 4 + b, s.y[i], s.x[i]]


def test_lsa_forced_arithmetic():
    grid = np.zeros((1, 3, 3))
    grid[0, 0, 0] = grid[0, 1, 0] = grid[0, 0, 1] = 1.0
    out = lsa(grid)
    assert out[0, 0, 0] == 3.0


def test_lsa_zero_and_sum_rule():
    assert np.array_equal(lsa(np.zeros((2, 4, 4))), np.zeros((2, 4, 4)))
    rng = np.random.default_rng(4)
    grid = np.abs(rng.normal(size=(3, 5, 6)))
    out = lsa(grid)
    assert out.sum() <= 3.0 * grid.sum() + 1e-9
    # each cell is counted by itself, its up-neighbor and its left-neighbor,
    # so the total triples exactly when the first row and column hold no mass
    interior = np.zeros((1, 4, 4))
    interior[0, 1:, 1:] = np.abs(rng.normal(size=(3, 3)))
    assert np.isclose(lsa(interior).sum(), 3.0 * interior.sum())
    edge = np.zeros((1, 4, 4))
    edge[0, 0, 2] = 1.0
    assert lsa(edge).sum() < 3.0


def test_lsa_snapshot_not_cascading():
    grid = np.zeros((1, 1, 3))
    grid[0, 0, 2] = 1.0
    out = lsa(grid)
    # cascading right-to-left would propagate the 1 into column 0
    assert np.array_equal(out[0, 0], [0.0, 1.0, 1.0])


def test_lsa_backward_is_adjoint():
    rng = np.random.default_rng(5)
    grid = rng.normal(size=(2, 4, 5))
    dout = rng.normal(size=(2, 4, 5))
    lhs = np.sum(lsa(grid) * dout)
    rhs = np.sum(grid * lsa_backward(dout))
    assert np.isclose(lhs, rhs, rtol=1e-12)


def _encoder(bins=2, geometry=GEO, oracle=False, seed=0):
    return TemporalVoxelEncoder(
        TveConfig(bins, geometry), derive_rng(seed, "t"), dtype=np.float64,
        oracle=oracle,
    )


def test_tcr_zero_params_halves():
    enc = _encoder()
    enc.tcr_w.value[...] = 0.0
    enc.tcr_b.value[...] = 0.0
    rng = np.random.default_rng(6)
    grid = rng.normal(size=(4, GEO.height, GEO.width))
    out, _ = enc.tcr(grid)
    assert np.allclose(out, grid / 2.0)


def test_tcr_zero_input():
    enc = _encoder()
    out, _ = enc.tcr(np.zeros((4, GEO.height, GEO.width)))
    assert np.array_equal(out, np.zeros_like(out))


def test_tcr_shrinks_magnitudes():
    rng = np.random.default_rng(7)
    enc = _encoder()
    for _ in range(20):
        grid = rng.normal(size=(4, GEO.height, GEO.width)) * 10
        out, _ = enc.tcr(grid)
        assert np.all(np.abs(out) <= np.abs(grid) + 1e-12)


def test_encode_empty_stream_is_zero():
    enc = _encoder()
    out, _ = enc.encode(EventStream.from_events([], GEO))
    assert np.array_equal(out, np.zeros_like(out))


def test_encode_geometry_mismatch_rejected():
    enc = _encoder()
    s = EventStream.from_events([(0, 0, 0, 1)], SensorGeometry(5, 5))
    with pytest.raises(ValueError):
        enc.encode(s)


def test_oracle_encode_matches_histogram_pipeline():
    rng = np.random.default_rng(8)
    for bins in (2, 4):
        enc = _encoder(bins=bins, oracle=True)
        s = random_stream(rng, 300)
        out, _ = enc.encode(s)
        hist = histogram_voxelize(s, bins)
        expected, _ = enc.tcr(lsa(hist))
        assert np.allclose(out, expected, atol=1e-12)


def test_mirror_equivariance_pre_lsa():
    rng = np.random.default_rng(9)
    enc = _encoder(bins=4)
    for _ in range(10):
        s = random_stream(rng, 400)
        m = mirror(s, u=0.0)
        t_norm = normalize_time(s)
        delta = temporal_offsets(t_norm, 4)
        w, _ = enc.lta_weights(delta)
        grid = accumulate(s.x, s.y, s.p, w, 4, GEO, dtype=np.float64)
        grid_m = accumulate(m.x, m.y, m.p, w, 4, GEO, dtype=np.float64)
        assert np.allclose(grid_m, grid[:, :, ::-1], atol=1e-6)


def test_encode_batch_matches_single():
    rng = np.random.default_rng(10)
    enc = _encoder(bins=3)
    streams = [random_stream(rng, n) for n in (0, 50, 200)]
    batch, _ = enc.encode_batch(streams)
    for k, s in enumerate(streams):
        single, _ = enc.encode(s)
        assert np.allclose(batch[k], single, atol=1e-10)


def test_encode_gradient_reaches_scale_and_mlp():
    rng = np.random.default_rng(11)
    enc = _encoder(bins=2)
    s = random_stream(rng, 30)
    out, cache = enc.encode(s)
    enc.backward(np.ones_like(out), cache)
    assert abs(float(enc.scale.grad)) > 0.0
    assert np.abs(enc.mlp.w1.grad).sum() > 0.0
    assert np.abs(enc.tcr_w.grad).sum() > 0.0
