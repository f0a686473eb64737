"""Dynamic event subframe splitting.

The window ``[start_us, end_us]`` between two RGB exposure timestamps is cut
into ``n`` equal-duration bins. Bin ``i`` is half-open
``[b_i, b_{i+1})`` except the last, which also takes ``t == end_us``. The
boundaries are ``b_i = start_us + round(i * (end_us - start_us) / n)``
computed exactly in integers (halves round up), so bin widths differ by at
most 1 us.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .events import EventStream

DEFAULT_SUBFRAMES = 3


@dataclass(frozen=True)
class SplitConfig:
    start_us: int
    end_us: int
    n: int = DEFAULT_SUBFRAMES

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"subframe count n must be >= 1, got {self.n}")
        if self.end_us <= self.start_us:
            raise ConfigError(f"window end {self.end_us} must exceed start {self.start_us}")
        if self.end_us - self.start_us < self.n:
            # fewer microseconds than bins would force repeated boundaries
            raise ConfigError(
                f"window of {self.end_us - self.start_us} us cannot hold {self.n} distinct bins"
            )

    def boundaries(self) -> tuple[int, ...]:
        span = self.end_us - self.start_us
        n = self.n
        return tuple(self.start_us + (2 * i * span + n) // (2 * n) for i in range(n + 1))


@dataclass(frozen=True)
class EventClusterSet:
    clusters: tuple[EventStream, ...]
    boundaries: tuple[int, ...]
    dropped: int

    @property
    def n(self):
        return len(self.clusters)

    def counts(self) -> list[int]:
        return [len(c) for c in self.clusters]

    def window(self, i: int) -> tuple[int, int]:
        """Time window of cluster ``i`` as ``[begin, end)``; the last is widened by 1 us."""
        end = self.boundaries[i + 1] + (1 if i == self.n - 1 else 0)
        return self.boundaries[i], end


def assign_bins(t: np.ndarray, cfg: SplitConfig) -> np.ndarray:
    """Cluster index of every timestamp, or -1 when outside the window."""
    b = np.asarray(cfg.boundaries(), dtype=np.int64)
    idx = np.searchsorted(b[1:-1], t, side="right")
    inside = (t >= cfg.start_us) & (t <= cfg.end_us)
    return np.where(inside, idx, -1)


def split(stream: EventStream, cfg: SplitConfig) -> EventClusterSet:
    bins = assign_bins(stream.t, cfg)
    clusters = tuple(stream.take(np.flatnonzero(bins == i)) for i in range(cfg.n))
    return EventClusterSet(clusters, cfg.boundaries(), int(np.count_nonzero(bins < 0)))


def split_to_single(stream: EventStream, cfg: SplitConfig) -> EventClusterSet:
    """Single-frame baseline: the whole window as one cluster."""
    return split(stream, replace(cfg, n=1))
