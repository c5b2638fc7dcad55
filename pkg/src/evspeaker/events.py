"""Event stream types and I/O.

An event is a polarity spike (x, y, t, p) on a pixel grid: x/y are pixel
coordinates, t is a microsecond timestamp and p in {-1, +1} is the sign of
the local brightness change. Streams are stored as column arrays sorted by
timestamp (stable, so simultaneous events keep their input order) and are
immutable after construction.

Two on-disk formats are supported:

* EVB binary: little-endian, 12-byte header (magic ``EVB1``, u16 width,
  u16 height, u32 record count) followed by fixed 16-byte records
  (u64 t_us, u16 x, u16 y, i8 p, 3 zero pad bytes).
* CSV: one ``t,x,y,p`` line per event, optional header line.

Datasets are described by a JSON-lines manifest, one object per sample:
``{"file": ..., "subject": ..., "digit": ..., "scene": ..., "duration_us": ...}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

# Canonical lip-region crop used by the digit-articulation recordings.
DEFAULT_WIDTH = 200
DEFAULT_HEIGHT = 160

# Scene tags accepted in manifests: recorded conditions plus synthetic proxies.
RECORDED_SCENES = ("SI-0", "SI-45", "SI-90", "II-0")
SYNTHETIC_SCENES = ("frontal", "view45", "view90", "lowlight")

_EVB_MAGIC = b"EVB1"
_EVB_HEADER = struct.Struct("<4sHHI")
_EVB_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1"), ("pad", "V3")]
)


class EmptyStreamError(ValueError):
    """Raised when an operation requires at least one event."""


class InvalidRoiError(ValueError):
    """Raised when a crop window does not fit inside the source geometry."""


class ParseError(ValueError):
    """Raised on malformed stream files; carries the offending record index."""

    def __init__(self, message: str, record_index: Optional[int] = None):
        super().__init__(message)
        self.record_index = record_index


class SensorGeometry(NamedTuple):
    width: int
    height: int


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class StreamMeta:
    """Optional per-sample annotations carried alongside the events."""

    subject: Optional[int] = None
    digit: Optional[int] = None
    scene: Optional[str] = None
    duration_us: Optional[int] = None


class EventStream:
    """Immutable time-sorted event sequence bound to a sensor geometry.

    Events are stored as parallel column arrays. The constructor validates
    bounds and polarity and stable-sorts by timestamp, then freezes the
    arrays, so a constructed stream always satisfies its invariants and can
    be shared freely across threads.
    """

    __slots__ = ("x", "y", "t", "p", "geometry", "meta")

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        t: np.ndarray,
        p: np.ndarray,
        geometry: SensorGeometry,
        meta: Optional[StreamMeta] = None,
    ):
        geometry = SensorGeometry(int(geometry[0]), int(geometry[1]))
        if geometry.width < 1 or geometry.height < 1:
            raise ValueError(f"geometry must be at least 1x1, got {geometry}")
        x = np.asarray(x)
        y = np.asarray(y)
        t = np.asarray(t)
        p = np.asarray(p)
        n = len(t)
        if not (len(x) == len(y) == len(p) == n):
            raise ValueError("event columns must have equal length")
        if n:
            if x.min() < 0 or int(x.max()) >= geometry.width:
                raise ValueError("event x coordinate outside geometry")
            if y.min() < 0 or int(y.max()) >= geometry.height:
                raise ValueError("event y coordinate outside geometry")
            if t.min() < 0:
                raise ValueError("negative timestamp")
            if not np.isin(p, (-1, 1)).all():
                raise ValueError("polarity must be -1 or +1")
        x = x.astype(np.uint16)
        y = y.astype(np.uint16)
        t = t.astype(np.uint64)
        p = p.astype(np.int8)
        if n and np.any(np.diff(t.astype(np.int64)) < 0):
            order = np.argsort(t, kind="stable")
            x, y, t, p = x[order], y[order], t[order], p[order]
        for arr in (x, y, t, p):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "meta", meta)

    def __setattr__(self, name, value):
        raise AttributeError("EventStream is immutable")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and len(self) == len(other)
            and bool(
                np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.p, other.p)
            )
        )

    def __repr__(self) -> str:
        return (
            f"EventStream(n={len(self)}, geometry={self.geometry.width}x"
            f"{self.geometry.height})"
        )

    @classmethod
    def from_events(
        cls,
        events: Sequence[tuple],
        geometry: SensorGeometry,
        meta: Optional[StreamMeta] = None,
    ) -> "EventStream":
        """Build a stream from (x, y, t, p) tuples."""
        if events:
            cols = np.asarray([(e[0], e[1], e[2], e[3]) for e in events], dtype=np.int64)
            return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], geometry, meta)
        empty = np.empty(0, dtype=np.int64)
        return cls(empty, empty, empty, empty, geometry, meta)

    def replace(self, **kwargs) -> "EventStream":
        """Copy of this stream with some columns or fields substituted."""
        fields = {"x": self.x, "y": self.y, "t": self.t, "p": self.p,
                  "geometry": self.geometry, "meta": self.meta}
        fields.update(kwargs)
        return EventStream(**fields)


def normalize_time(stream: EventStream) -> np.ndarray:
    """Map timestamps linearly onto [0, 1].

    A zero-duration stream (all timestamps equal) normalizes to all zeros so
    that single-burst fixtures stay usable downstream.
    """
    if len(stream) == 0:
        raise EmptyStreamError("cannot normalize an empty stream")
    t = stream.t.astype(np.float64)
    span = t[-1] - t[0]
    if span == 0.0:
        return np.zeros(len(stream), dtype=np.float64)
    return (t - t[0]) / span


def crop_roi(
    stream: EventStream, origin: tuple[int, int], size: tuple[int, int]
) -> EventStream:
    """Keep events inside the window and re-origin coordinates to (0, 0)."""
    x0, y0 = int(origin[0]), int(origin[1])
    w, h = int(size[0]), int(size[1])
    gw, gh = stream.geometry
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > gw or y0 + h > gh:
        raise InvalidRoiError(
            f"window origin={origin} size={size} outside geometry {gw}x{gh}"
        )
    x = stream.x.astype(np.int64)
    y = stream.y.astype(np.int64)
    keep = (x >= x0) & (x < x0 + w) & (y >= y0) & (y < y0 + h)
    return EventStream(
        x[keep] - x0, y[keep] - y0, stream.t[keep], stream.p[keep],
        SensorGeometry(w, h), stream.meta,
    )


def downscale(stream: EventStream, factor: int) -> EventStream:
    """Integer-divide coordinates by ``factor``, shrinking the geometry.

    Used to bring full-resolution recordings down to a desk-scale encode
    grid; timestamps and polarities are untouched.
    """
    if factor < 1:
        raise ValueError("downscale factor must be >= 1")
    if factor == 1:
        return stream
    gw, gh = stream.geometry
    new_geo = SensorGeometry(max(1, gw // factor), max(1, gh // factor))
    x = np.minimum(stream.x // factor, new_geo.width - 1)
    y = np.minimum(stream.y // factor, new_geo.height - 1)
    return EventStream(x, y, stream.t, stream.p, new_geo, stream.meta)


# ---------------------------------------------------------------------------
# Stream I/O
# ---------------------------------------------------------------------------


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".evb":
        return "evb"
    if suffix == ".csv":
        return "csv"
    raise ValueError(f"cannot infer stream format from {path.name}; pass format=...")


def save_stream(stream: EventStream, path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "evb":
        _save_evb(stream, path)
    elif fmt == "csv":
        _save_csv(stream, path)
    else:
        raise ValueError(f"unknown stream format {fmt!r}")


def load_stream(
    path,
    format: Optional[str] = None,
    geometry: Optional[SensorGeometry] = None,
    meta: Optional[StreamMeta] = None,
) -> EventStream:
    """Load a stream, sorting by timestamp and validating every record.

    CSV carries no geometry, so ``geometry`` is required for it; for EVB it
    is taken from the file header.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "evb":
        return _load_evb(path, meta)
    if fmt == "csv":
        if geometry is None:
            raise ValueError("CSV streams need an explicit geometry")
        return _load_csv(path, geometry, meta)
    raise ValueError(f"unknown stream format {fmt!r}")


def _save_evb(stream: EventStream, path: Path) -> None:
    records = np.zeros(len(stream), dtype=_EVB_RECORD_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    header = _EVB_HEADER.pack(
        _EVB_MAGIC, stream.geometry.width, stream.geometry.height, len(stream)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def _load_evb(path: Path, meta: Optional[StreamMeta]) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _EVB_HEADER.size:
        raise ParseError(f"{path}: truncated header", record_index=0)
    magic, width, height, count = _EVB_HEADER.unpack_from(raw)
    if magic != _EVB_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}", record_index=0)
    payload = raw[_EVB_HEADER.size:]
    if len(payload) != count * _EVB_RECORD_DTYPE.itemsize:
        complete = len(payload) // _EVB_RECORD_DTYPE.itemsize
        raise ParseError(
            f"{path}: expected {count} records, payload holds {complete} complete "
            "records",
            record_index=complete,
        )
    records = np.frombuffer(payload, dtype=_EVB_RECORD_DTYPE)
    geometry = SensorGeometry(width, height)
    return _validated_stream(
        records["x"].astype(np.int64),
        records["y"].astype(np.int64),
        records["t"].astype(np.int64),
        records["p"].astype(np.int64),
        geometry,
        meta,
        str(path),
    )


def _save_csv(stream: EventStream, path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("t,x,y,p\n")
        for i in range(len(stream)):
            fh.write(f"{int(stream.t[i])},{int(stream.x[i])},{int(stream.y[i])},{int(stream.p[i])}\n")


def _load_csv(path: Path, geometry: SensorGeometry, meta: Optional[StreamMeta]) -> EventStream:
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines and not lines[0].split(",")[0].strip().lstrip("-").isdigit():
        start = 1  # header line
    for idx, line in enumerate(lines[start:]):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"{path}: line has {len(parts)} fields", record_index=idx)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"{path}: non-integer field in {line!r}", record_index=idx)
        rows.append((x, y, t, p))
    if rows:
        cols = np.asarray(rows, dtype=np.int64)
        x, y, t, p = cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3]
    else:
        x = y = t = p = np.empty(0, dtype=np.int64)
    return _validated_stream(x, y, t, p, geometry, meta, str(path))


def _validated_stream(x, y, t, p, geometry, meta, source: str) -> EventStream:
    """Validate record-level invariants with index reporting, then build."""
    bad_p = ~np.isin(p, (-1, 1))
    if bad_p.any():
        idx = int(np.argmax(bad_p))
        raise ParseError(f"{source}: record {idx} has polarity {p[idx]}", record_index=idx)
    oob = (x < 0) | (x >= geometry.width) | (y < 0) | (y >= geometry.height)
    if oob.any():
        idx = int(np.argmax(oob))
        raise ParseError(
            f"{source}: record {idx} at ({x[idx]},{y[idx]}) outside "
            f"{geometry.width}x{geometry.height}",
            record_index=idx,
        )
    if (t < 0).any():
        idx = int(np.argmax(t < 0))
        raise ParseError(f"{source}: record {idx} has negative timestamp", record_index=idx)
    return EventStream(x, y, t, p, geometry, meta)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    subject: int
    digit: int
    scene: str
    duration_us: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "file": self.file,
                "subject": self.subject,
                "digit": self.digit,
                "scene": self.scene,
                "duration_us": self.duration_us,
            }
        )


def save_manifest(entries: Sequence[ManifestEntry], path) -> None:
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(entry.to_json() + "\n")


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path) as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append(
                    ManifestEntry(
                        file=str(obj["file"]),
                        subject=int(obj["subject"]),
                        digit=int(obj["digit"]),
                        scene=str(obj["scene"]),
                        duration_us=int(obj["duration_us"]),
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: manifest line {idx}: {exc}", record_index=idx)
    return entries


def load_manifest_stream(entry: ManifestEntry, root) -> EventStream:
    """Load the sample a manifest entry points at, attaching its metadata."""
    meta = StreamMeta(
        subject=entry.subject,
        digit=entry.digit,
        scene=entry.scene,
        duration_us=entry.duration_us,
    )
    return load_stream(Path(root) / entry.file, meta=meta)
