"""Event data model and the CSV / packed-binary event codecs.

CSV: UTF-8 lines ``t,x,y,p`` with an optional ``t,x,y,p`` header line.
Binary: little-endian 13-byte records ``t:u64, x:u16, y:u16, p:i8``.

Both parsers validate polarity and bounds and return streams stably sorted
by timestamp, so events sharing a timestamp keep their file order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import BoundsError, LengthError, ParseError, PolarityError

CSV_HEADER = "t,x,y,p"
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 13, no padding
# Timestamps are held as int64; larger u64 values are rejected on parse.
MAX_TIMESTAMP = np.iinfo(np.int64).max


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 346
    height: int = 260

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sensor geometry must be >= 1x1, got {self.width}x{self.height}")


DEFAULT_GEOMETRY = SensorGeometry()


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


class EventStream:
    """Columnar, read-only event sequence on a sensor of ``width x height``.

    The constructor does not validate; use :func:`validate` or the parsers.
    """

    __slots__ = ("t", "x", "y", "p", "width", "height")

    def __init__(self, t, x, y, p, width: int = DEFAULT_GEOMETRY.width,
                 height: int = DEFAULT_GEOMETRY.height):
        cols = [np.array(c, dtype=np.int64).reshape(-1) for c in (t, x, y, p)]
        if len({c.size for c in cols}) != 1:
            raise ValueError("event columns must have equal length")
        for c in cols:
            c.flags.writeable = False
        self.t, self.x, self.y, self.p = cols
        self.width = int(width)
        self.height = int(height)

    @classmethod
    def empty(cls, geom: SensorGeometry = DEFAULT_GEOMETRY) -> "EventStream":
        return cls([], [], [], [], geom.width, geom.height)

    @classmethod
    def from_events(cls, events: Iterable[Event], geom: SensorGeometry = DEFAULT_GEOMETRY):
        events = list(events)
        return cls([e.t for e in events], [e.x for e in events], [e.y for e in events],
                   [e.p for e in events], geom.width, geom.height)

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height)

    def __len__(self):
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def take(self, indices) -> "EventStream":
        indices = np.asarray(indices, dtype=np.intp)
        return EventStream(self.t[indices], self.x[indices], self.y[indices], self.p[indices],
                           self.width, self.height)

    def stable_sorted(self) -> "EventStream":
        return self.take(np.argsort(self.t, kind="stable"))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and all(np.array_equal(a, b) for a, b in
                        zip((self.t, self.x, self.y, self.p),
                            (other.t, other.x, other.y, other.p))))

    def __repr__(self):
        return f"EventStream(n={len(self)}, geometry={self.width}x{self.height})"


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str  # "order" | "bounds" | "polarity" | "timestamp"
    message: str


def validate(stream: EventStream, geom: SensorGeometry | None = None) -> list[Violation]:
    """Return every invariant violation in ``stream``; empty list means ok."""
    geom = geom or stream.geometry
    out = []
    t, x, y, p = stream.t, stream.x, stream.y, stream.p
    for i in np.nonzero(t < 0)[0]:
        out.append(Violation(int(i), "timestamp", f"negative timestamp {t[i]}"))
    for i in np.nonzero((p != 1) & (p != -1))[0]:
        out.append(Violation(int(i), "polarity", f"polarity {p[i]} not in {{-1, +1}}"))
    bad = (x < 0) | (x >= geom.width) | (y < 0) | (y >= geom.height)
    for i in np.nonzero(bad)[0]:
        out.append(Violation(int(i), "bounds",
                             f"({x[i]}, {y[i]}) outside {geom.width}x{geom.height}"))
    for i in np.nonzero(np.diff(t) < 0)[0]:
        out.append(Violation(int(i) + 1, "order", f"timestamp {t[i + 1]} < previous {t[i]}"))
    out.sort(key=lambda v: (v.index, v.kind))
    return out


def _check_record(t, x, y, p, geom, line, source):
    if p not in (1, -1):
        raise PolarityError(f"polarity {p} not in {{-1, +1}}", line, source)
    if t < 0 or t > MAX_TIMESTAMP:
        raise BoundsError(f"timestamp {t} out of range", line, source)
    if not (0 <= x < geom.width and 0 <= y < geom.height):
        raise BoundsError(f"({x}, {y}) outside {geom.width}x{geom.height}", line, source)


def parse_csv(data: bytes, geom: SensorGeometry = DEFAULT_GEOMETRY, source=None) -> EventStream:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", None, source) from exc
    cols = ([], [], [], [])
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if not seen_data and line.replace(" ", "") == CSV_HEADER:
            seen_data = True
            continue
        seen_data = True
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields t,x,y,p, got {len(parts)}: {raw!r}", lineno, source)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise ParseError(f"non-integer field in {raw!r}", lineno, source) from None
        _check_record(t, x, y, p, geom, lineno, source)
        for col, v in zip(cols, (t, x, y, p)):
            col.append(v)
    return EventStream(*cols, geom.width, geom.height).stable_sorted()


def write_csv(stream: EventStream) -> bytes:
    lines = [CSV_HEADER]
    lines.extend(f"{t},{x},{y},{p}" for t, x, y, p in
                 zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_binary(data: bytes, geom: SensorGeometry = DEFAULT_GEOMETRY, source=None) -> EventStream:
    if len(data) % RECORD_SIZE:
        raise LengthError(f"{len(data)} bytes is not a multiple of the {RECORD_SIZE}-byte record "
                          f"(truncated record at byte {len(data) - len(data) % RECORD_SIZE})",
                          None, source)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE)
    p = rec["p"]
    bad = np.nonzero((p != 1) & (p != -1))[0]
    if bad.size:
        i = int(bad[0])
        raise PolarityError(f"record {i}: polarity byte {int(p[i])} not in {{-1, +1}}", None, source)
    big = np.nonzero(rec["t"] > np.uint64(MAX_TIMESTAMP))[0]
    if big.size:
        raise BoundsError(f"record {int(big[0])}: timestamp exceeds int64 range", None, source)
    x = rec["x"].astype(np.int64)
    y = rec["y"].astype(np.int64)
    oob = np.nonzero((x >= geom.width) | (y >= geom.height))[0]
    if oob.size:
        i = int(oob[0])
        raise BoundsError(f"record {i}: ({x[i]}, {y[i]}) outside {geom.width}x{geom.height}",
                          None, source)
    stream = EventStream(rec["t"].astype(np.int64), x, y, p, geom.width, geom.height)
    return stream.stable_sorted()


def write_binary(stream: EventStream) -> bytes:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    return rec.tobytes()
