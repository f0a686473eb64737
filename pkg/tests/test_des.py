import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evkit import reference as ref
from evkit.accumulator import accumulate, sum_frames
from evkit.des import SplitConfig, split, split_to_single
from evkit.errors import ConfigError
from evkit.events import EventStream, SensorGeometry


def _stream(t, geom=SensorGeometry(346, 260), rng=None):
    rng = rng or np.random.default_rng(0)
    t = np.sort(np.asarray(t))
    n = t.size
    return EventStream(t, rng.integers(0, geom.width, n), rng.integers(0, geom.height, n),
                       rng.choice([-1, 1], n), geom.width, geom.height)


def test_uniform_partition():
    cs = split(_stream(np.arange(300)), SplitConfig(0, 300, 3))
    assert cs.counts() == [100, 100, 100]
    assert cs.boundaries == (0, 100, 200, 300)
    assert cs.dropped == 0


def test_empty_stream():
    cs = split(EventStream.empty(), SplitConfig(0, 10, 4))
    assert cs.counts() == [0, 0, 0, 0] and cs.dropped == 0


def test_last_bin_is_closed_and_outside_dropped():
    cs = split(_stream([9, 10, 20, 30, 31]), SplitConfig(10, 30, 2))
    assert cs.counts() == [1, 2]
    assert cs.dropped == 2  # t=9 and t=31


@pytest.mark.parametrize("kwargs", [dict(start_us=0, end_us=10, n=0),
                                    dict(start_us=5, end_us=5, n=1),
                                    dict(start_us=0, end_us=2, n=3)])
def test_bad_config(kwargs):
    with pytest.raises(ConfigError):
        SplitConfig(**kwargs)


@pytest.mark.parametrize("start,end,n", [(0, 10, 3), (7, 8, 1), (0, 3, 3), (100, 1101, 8),
                                         (0, 5, 2)])
def test_boundaries_exact_rounding(start, end, n):
    b = SplitConfig(start, end, n).boundaries()
    assert list(b) == ref.boundaries(start, end, n)
    assert all(b2 > b1 for b1, b2 in zip(b, b[1:]))
    widths = np.diff(b)
    assert widths.max() - widths.min() <= 1


def test_membership_matches_linear_scan_oracle(rng):
    t = rng.integers(-200, 5200, 1000)
    s = _stream(t, rng=rng)
    cfg = SplitConfig(0, 5000, 3)
    cs = split(s, cfg)
    clusters, b, dropped = ref.split([(e.x, e.y, e.t, e.p) for e in s], 0, 5000, 3)
    assert list(cs.boundaries) == b
    assert cs.dropped == dropped
    for got, want in zip(cs.clusters, clusters):
        assert [(e.x, e.y, e.t, e.p) for e in got] == want


def test_split_to_single(rng):
    s = _stream(rng.integers(0, 2000, 700), rng=rng)
    cfg = SplitConfig(300, 1500, 5)
    single = split_to_single(s, cfg)
    assert single.n == 1
    direct = split(s, SplitConfig(300, 1500, 1))
    assert single.clusters[0] == direct.clusters[0] and single.boundaries == direct.boundaries
    inside = s.take(np.flatnonzero((s.t >= 300) & (s.t <= 1500)))
    assert single.clusters[0] == inside


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 2000), max_size=300), st.integers(0, 1000),
       st.integers(1, 1000), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_conservation_coverage_refinement(ts, start, span, n, seed):
    span = max(span, n)
    geom = SensorGeometry(7, 5)
    s = _stream(ts, geom, np.random.default_rng(seed))
    cfg = SplitConfig(start, start + span, n)
    cs = split(s, cfg)
    assert sum(cs.counts()) + cs.dropped == len(s)
    inside = s.take(np.flatnonzero((s.t >= cfg.start_us) & (s.t <= cfg.end_us)))
    assert np.array_equal(np.concatenate([c.t for c in cs.clusters]), inside.t)
    assert np.array_equal(np.concatenate([c.x for c in cs.clusters]), inside.x)
    summed = sum_frames(accumulate(c, geom) for c in cs.clusters)
    assert np.array_equal(summed, accumulate(split_to_single(s, cfg).clusters[0], geom).counts)
