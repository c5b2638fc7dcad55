import numpy as np
import pytest

from evspeaker.events import (
    EmptyStreamError,
    Event,
    EventStream,
    InvalidRoiError,
    ManifestEntry,
    ParseError,
    SensorGeometry,
    StreamMeta,
    crop_roi,
    downscale,
    load_manifest,
    load_stream,
    normalize_time,
    save_manifest,
    save_stream,
)

GEO = SensorGeometry(32, 24)


def random_stream(rng, n=200, geometry=GEO, max_t=1_000_000):
    x = rng.integers(0, geometry.width, n)
    y = rng.integers(0, geometry.height, n)
    t = np.sort(rng.integers(0, max_t, n))
    p = rng.choice([-1, 1], n)
    return EventStream(x, y, t, p, geometry)


def test_normalize_linear_endpoints():
    s = EventStream.from_events([(0, 0, 100, 1), (1, 1, 150, -1), (2, 2, 200, 1)], GEO)
    assert np.allclose(normalize_time(s), [0.0, 0.5, 1.0])


def test_normalize_degenerate_duration_is_zero():
    s = EventStream.from_events([(0, 0, 7, 1), (1, 1, 7, -1), (2, 2, 7, 1)], GEO)
    assert np.array_equal(normalize_time(s), np.zeros(3))


def test_normalize_empty_stream_raises():
    s = EventStream.from_events([], GEO)
    with pytest.raises(EmptyStreamError):
        normalize_time(s)


def test_normalize_random_streams_range_and_order():
    rng = np.random.default_rng(0)
    for _ in range(10):
        s = random_stream(rng, n=1000)
        tn = normalize_time(s)
        assert tn.min() == 0.0 and tn.max() == 1.0
        assert np.all(np.diff(tn) >= 0)


def test_normalize_shift_invariance():
    rng = np.random.default_rng(1)
    s = random_stream(rng, n=500)
    shifted = EventStream(s.x, s.y, s.t + np.uint64(12345), s.p, s.geometry)
    assert np.allclose(normalize_time(s), normalize_time(shifted))


def test_constructor_sorts_by_time_stably():
    s = EventStream.from_events(
        [(3, 3, 50, 1), (1, 1, 10, -1), (2, 2, 50, -1)], GEO
    )
    assert [e.t for e in s] == [10, 50, 50]
    # ties keep input order: (3,3) came before (2,2)
    assert s[1] == Event(3, 3, 50, 1)
    assert s[2] == Event(2, 2, 50, -1)


def test_constructor_rejects_bad_events():
    with pytest.raises(ValueError):
        EventStream.from_events([(99, 0, 0, 1)], SensorGeometry(10, 10))
    with pytest.raises(ValueError):
        EventStream.from_events([(0, 0, 0, 0)], GEO)


def test_streams_are_immutable():
    s = EventStream.from_events([(1, 1, 5, 1)], GEO)
    with pytest.raises(ValueError):
        s.x[0] = 3
    with pytest.raises(AttributeError):
        s.geometry = SensorGeometry(1, 1)


# -- crop_roi ---------------------------------------------------------------


def test_crop_corner_reorigin():
    s = EventStream.from_events([(10, 10, 5, 1)], GEO)
    out = crop_roi(s, (10, 10), (5, 5))
    assert len(out) == 1 and out[0] == Event(0, 0, 5, 1)
    assert out.geometry == SensorGeometry(5, 5)


def test_crop_boundary_exclusion():
    s = EventStream.from_events([(9, 10, 5, 1)], GEO)
    assert len(crop_roi(s, (10, 10), (5, 5))) == 0


def test_crop_full_frame_identity():
    rng = np.random.default_rng(2)
    s = random_stream(rng)
    assert crop_roi(s, (0, 0), (GEO.width, GEO.height)) == s


def test_crop_invalid_window():
    s = EventStream.from_events([(0, 0, 0, 1)], GEO)
    with pytest.raises(InvalidRoiError):
        crop_roi(s, (30, 0), (5, 5))
    with pytest.raises(InvalidRoiError):
        crop_roi(s, (-1, 0), (5, 5))


def test_downscale_shrinks_coordinates():
    s = EventStream.from_events([(31, 23, 9, 1), (4, 5, 2, -1)], GEO)
    out = downscale(s, 4)
    assert out.geometry == SensorGeometry(8, 6)
    assert {tuple(e) for e in out} == {(7, 5, 9, 1), (1, 1, 2, -1)}


# -- stream I/O -------------------------------------------------------------


@pytest.mark.parametrize("fmt,suffix", [("evb", ".evb"), ("csv", ".csv")])
def test_save_load_round_trip(tmp_path, fmt, suffix):
    rng = np.random.default_rng(3)
    for i in range(5):
        s = random_stream(rng, n=int(rng.integers(0, 300)))
        path = tmp_path / f"s{i}{suffix}"
        save_stream(s, path, fmt)
        loaded = load_stream(path, fmt, geometry=GEO)
        assert loaded == s


def test_csv_field_order(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("1500,3,4,-1\n")
    s = load_stream(path, geometry=GEO)
    assert s[0] == Event(3, 4, 1500, -1)


def test_csv_header_optional(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("t,x,y,p\n1500,3,4,-1\n")
    assert load_stream(path, geometry=GEO)[0] == Event(3, 4, 1500, -1)


def test_evb_truncated_final_record(tmp_path):
    rng = np.random.default_rng(4)
    s = random_stream(rng, n=10)
    path = tmp_path / "t.evb"
    save_stream(s, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])  # cut into the last record
    with pytest.raises(ParseError) as err:
        load_stream(path)
    assert err.value.record_index == 9


def test_loader_rejects_bad_polarity(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("10,1,1,1\n20,2,2,0\n")
    with pytest.raises(ParseError) as err:
        load_stream(path, geometry=GEO)
    assert err.value.record_index == 1


def test_loader_rejects_out_of_bounds(tmp_path):
    path = tmp_path / "oob.csv"
    path.write_text("10,40,1,1\n")
    with pytest.raises(ParseError):
        load_stream(path, geometry=GEO)


def test_loader_sorts_unsorted_csv(tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("300,1,1,1\n100,2,2,-1\n")
    s = load_stream(path, geometry=GEO)
    assert [e.t for e in s] == [100, 300]


def test_loaded_stream_carries_meta(tmp_path):
    s = EventStream.from_events([(1, 1, 1, 1)], GEO)
    path = tmp_path / "m.evb"
    save_stream(s, path)
    meta = StreamMeta(subject=4, digit=7, scene="SI-0", duration_us=100)
    assert load_stream(path, meta=meta).meta == meta


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry("a.evb", 0, 3, "frontal", 3_000_000),
        ManifestEntry("b.evb", 1, 9, "SI-45", 3_000_000),
    ]
    path = tmp_path / "manifest.jsonl"
    save_manifest(entries, path)
    assert load_manifest(path) == entries


def test_manifest_rejects_missing_fields(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"file": "x.evb", "subject": 1}\n')
    with pytest.raises(ParseError):
        load_manifest(path)
