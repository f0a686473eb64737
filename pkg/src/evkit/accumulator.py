"""Polarity-sum event frames and their blue/red/white rendering.

x is the column and y the row, origin top-left. Counts are signed integer
sums of polarity; rendering looks only at the sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ParseError
from .events import EventStream, SensorGeometry

BLUE = (0, 0, 255)
RED = (255, 0, 0)
WHITE = (255, 255, 255)


@dataclass(frozen=True, eq=False)
class EventFrame:
    geom: SensorGeometry
    counts: np.ndarray  # int64, H x W
    window: tuple[int, int] | None = None

    def __eq__(self, other):
        if not isinstance(other, EventFrame):
            return NotImplemented
        return (self.geom == other.geom and self.window == other.window
                and np.array_equal(self.counts, other.counts))


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    geom: SensorGeometry
    pixels: np.ndarray  # uint8, H x W x 3


def accumulate(cluster: EventStream, geom: SensorGeometry | None = None,
               window: tuple[int, int] | None = None) -> EventFrame:
    geom = geom or cluster.geometry
    x, y = cluster.x, cluster.y
    bad = np.flatnonzero((x < 0) | (x >= geom.width) | (y < 0) | (y >= geom.height))
    if bad.size:
        i = int(bad[0])
        raise BoundsError(f"event {i} at ({x[i]}, {y[i]}) outside {geom.width}x{geom.height}")
    counts = np.zeros((geom.height, geom.width), dtype=np.int64)
    np.add.at(counts, (y, x), cluster.p)
    counts.flags.writeable = False
    return EventFrame(geom, counts, window)


def sum_frames(frames) -> np.ndarray:
    frames = list(frames)
    total = np.zeros_like(frames[0].counts)
    for f in frames:
        total = total + f.counts
    return total


def render(frame: EventFrame) -> RenderedFrame:
    c = frame.counts
    pixels = np.empty(c.shape + (3,), dtype=np.uint8)
    pixels[:] = WHITE
    pixels[c > 0] = BLUE
    pixels[c < 0] = RED
    return RenderedFrame(frame.geom, pixels)


def frame_to_tensor(frame: EventFrame) -> np.ndarray:
    return frame.counts.astype(np.float64)[None, :, :]


def encode_ppm(image: RenderedFrame) -> bytes:
    """Binary P6: ``P6\\n<W> <H>\\n255\\n`` then row-major RGB bytes."""
    h, w, _ = image.pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(image.pixels).tobytes()


def decode_ppm(data: bytes) -> RenderedFrame:
    """Inverse of :func:`encode_ppm`; accepts exactly that header layout."""
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ParseError("not a P6/255 image in evkit layout")
    try:
        w, h = (int(v) for v in parts[1].split(b" "))
    except ValueError:
        raise ParseError(f"bad PPM size line {parts[1]!r}") from None
    body = parts[3]
    if len(body) != w * h * 3:
        raise ParseError(f"PPM body has {len(body)} bytes, expected {w * h * 3}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return RenderedFrame(SensorGeometry(w, h), pixels)
