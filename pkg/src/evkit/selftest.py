"""Acceptance checks AC1..AC10, runnable from the CLI or pytest.

Every check compares the vectorized code paths against
:mod:`evkit.reference` or against central differences and returns a
:class:`CheckResult`. ``scale`` shrinks instance counts for quick runs;
``scale=1`` is the full acceptance workload.
"""

from __future__ import annotations

import hashlib
import math
import tempfile
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import esa, reference, stme
from .accumulator import EventFrame, accumulate, encode_ppm, render, sum_frames
from .des import SplitConfig, split, split_to_single
from .events import EventStream, SensorGeometry, parse_binary, parse_csv, write_binary, write_csv
from .numerics import grad_check
from .rng import SplitMix64

DEFAULT_TOPK_FRACTIONS = (Fraction(1, 2), Fraction(2, 3), Fraction(3, 4), Fraction(4, 5))

# sha256 of encode_ppm(render(golden_frame())); frozen at first release
GOLDEN_PPM_SHA256 = "09faeb15748e39f0cbba12779c02acec8172d1686f56d1ed66da5bec723258bd"


@dataclass
class CheckResult:
    id: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _n(count, scale):
    return max(1, int(round(count * scale)))


def random_stream(rng, size, geom, t_lo, t_hi, hot_times=()):
    """Time-sorted random stream; about a quarter of events land on ``hot_times``."""
    t = rng.integers(t_lo, t_hi + 1, size)
    if len(hot_times) and size:
        hot = rng.random(size) < 0.25
        t[hot] = rng.choice(np.asarray(hot_times), hot.sum())
    t.sort(kind="stable")
    return EventStream(t, rng.integers(0, geom.width, size), rng.integers(0, geom.height, size),
                       rng.choice([-1, 1], size), geom.width, geom.height)


def _random_window(rng, n):
    start = int(rng.integers(0, 10_000))
    span = int(rng.integers(n, 50_000))
    return SplitConfig(start, start + span, n)


def ac1_des_conservation(scale=1.0, seed=1):
    rng = np.random.default_rng(seed)
    geom = SensorGeometry(346, 260)
    bad = []
    for trial in range(_n(1000, scale)):
        n = int(rng.choice([1, 2, 3, 5, 8]))
        cfg = _random_window(rng, n)
        b = cfg.boundaries()
        margin = (cfg.end_us - cfg.start_us) // 4
        s = random_stream(rng, int(rng.integers(0, 10_001)), geom,
                          max(0, cfg.start_us - margin), cfg.end_us + margin, b)
        cs = split(s, cfg)
        sizes = cs.counts()
        if sum(sizes) + cs.dropped != len(s):
            bad.append(f"trial {trial}: {sum(sizes)} + {cs.dropped} != {len(s)}")
            continue
        if any(b2 <= b1 for b1, b2 in zip(cs.boundaries, cs.boundaries[1:])):
            bad.append(f"trial {trial}: boundaries not increasing {cs.boundaries}")
        for i, c in enumerate(cs.clusters):
            lo, hi = cs.boundaries[i], cs.boundaries[i + 1]
            upper_ok = (c.t <= hi) if i == n - 1 else (c.t < hi)
            if not ((c.t >= lo) & upper_ok).all():
                bad.append(f"trial {trial}: cluster {i} leaks outside [{lo}, {hi})")
        inside = (s.t >= cfg.start_us) & (s.t <= cfg.end_us)
        expect = s.take(np.flatnonzero(inside))
        got = [np.concatenate([getattr(c, col) for c in cs.clusters]) for col in "txyp"]
        if not all(np.array_equal(g, getattr(expect, col)) for g, col in zip(got, "txyp")):
            bad.append(f"trial {trial}: concatenated clusters differ from in-window substream")
    return not bad, f"{_n(1000, scale)} streams" if not bad else "; ".join(bad[:3])


def ac2_additivity(scale=1.0, seed=2):
    rng = np.random.default_rng(seed)
    bad = []
    for trial in range(_n(200, scale)):
        geom = SensorGeometry(int(rng.integers(1, 41)), int(rng.integers(1, 31)))
        n = int(rng.integers(1, 9))
        cfg = _random_window(rng, n)
        s = random_stream(rng, int(rng.integers(0, 3000)), geom,
                          cfg.start_us - 100, cfg.end_us + 100, cfg.boundaries())
        cs = split(s, cfg)
        summed = sum_frames(accumulate(c, geom) for c in cs.clusters)
        single = accumulate(split_to_single(s, cfg).clusters[0], geom).counts
        if not np.array_equal(summed, single):
            bad.append(f"fixture {trial}: subframe sum != single frame")
    return not bad, f"{_n(200, scale)} fixtures" if not bad else "; ".join(bad[:3])


def _topk_rows(rng, count):
    for _ in range(count):
        length = int(rng.integers(1, 65))
        kind = rng.integers(0, 3)
        if kind == 0:
            row = rng.normal(size=length)
        elif kind == 1:
            row = rng.integers(-2, 3, length).astype(float)  # heavy ties
        else:
            row = np.full(length, float(rng.normal()))
        yield row


def ac3_topk_oracle(scale=1.0, seed=3):
    rng = np.random.default_rng(seed)
    fractions = DEFAULT_TOPK_FRACTIONS + (Fraction(1),)
    bad = 0
    total = _n(10_000, scale)
    for row in _topk_rows(rng, total):
        frac = fractions[int(rng.integers(0, len(fractions)))]
        got = esa.topk_mask(row[None, :], float(frac))[0].astype(int).tolist()
        want = reference.topk_row(row, frac)
        if got != want or sum(got) != max(1, math.ceil(frac * len(row))):
            bad += 1
    return bad == 0, f"{total} rows, {bad} mismatches"


def _qkv(rng, max_len, max_d):
    lq, lk = int(rng.integers(1, max_len + 1)), int(rng.integers(1, max_len + 1))
    d = int(rng.integers(1, max_d + 1))
    return rng.normal(size=(lq, d)), rng.normal(size=(lk, d)), rng.normal(size=(lk, d))


def ac4_dense_equivalence(scale=1.0, seed=4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(_n(500, scale)):
        q, k, v = _qkv(rng, 16, 8)
        a = esa.sparse_attention(q, k, v, esa.SparsityConfig.dense())
        worst = max(worst, float(np.abs(a - esa.dense_attention(q, k, v)).max()))
    return worst <= 1e-9, f"max |sparse - dense| = {worst:.3e} (tol 1e-9)"


def _exact_fractions(cfg):
    return [Fraction(f).limit_denominator(10 ** 6) for f in cfg.fractions]


def ac5_esa_brute_force(scale=1.0, seed=5, cfg: esa.SparsityConfig | None = None):
    cfg = cfg or esa.SparsityConfig()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(_n(500, scale)):
        q, k, v = _qkv(rng, 16, 8)
        got = esa.sparse_attention(q, k, v, cfg)
        want = np.array(reference.sparse_attention(q, k, v, _exact_fractions(cfg), cfg.lambdas))
        worst = max(worst, float(np.abs(got - want).max()))
    return worst <= 1e-10, f"max |fast - reference| = {worst:.3e} (tol 1e-10)"


def ac6_row_stochastic(scale=1.0, seed=6, cfg: esa.SparsityConfig | None = None):
    cfg = cfg or esa.SparsityConfig()
    order = np.argsort(cfg.fractions, kind="stable")
    cfg = esa.SparsityConfig(tuple(cfg.fractions[i] for i in order),
                             tuple(cfg.lambdas[i] for i in order))
    rng = np.random.default_rng(seed)
    problems = []
    worst = 0.0
    for trial in range(_n(500, scale)):
        q, k, v = _qkv(rng, 16, 8)
        if trial % 3 == 0:
            rows = rng.integers(0, k.shape[0], k.shape[0])
            k, v = k[rows], v[rows]  # duplicated keys give tied scores
        tr = esa.sparse_attention_trace(q, k, v, cfg)
        row_max = tr.scores.max(axis=1, keepdims=True)
        for mask, level in zip(tr.masks, tr.levels):
            worst = max(worst, float(np.abs(level.sum(axis=1) - 1.0).max()))
            if (level[~mask] != 0.0).any():
                problems.append(f"trial {trial}: mass off support")
            if not (mask & (tr.scores == row_max)).any(axis=1).all():
                problems.append(f"trial {trial}: row maximum dropped")
        for small, big in zip(tr.masks, tr.masks[1:]):
            if (small & ~big).any():
                problems.append(f"trial {trial}: supports not nested")
    ok = not problems and worst <= 1e-9
    return ok, f"max |row sum - 1| = {worst:.3e}" + ("; " + "; ".join(problems[:3]) if problems else "")


def _gap_ok(scores, cfg, tol=1e-3):
    return not any(esa.boundary_tied(scores, f, tol) for f in cfg.fractions)


def _attention_point(rng, cfg):
    while True:
        q, k, v = _qkv(rng, 8, 4)
        if _gap_ok(q @ k.T / math.sqrt(q.shape[1]), cfg):
            return q, k, v


def ac7_gradients(scale=1.0, seed=7, cfg: esa.SparsityConfig | None = None):
    cfg = cfg or esa.SparsityConfig()
    rng = np.random.default_rng(seed)
    worst_attn = 0.0
    points = _n(50, scale)
    for _ in range(points):
        q, k, v = _attention_point(rng, cfg)
        lam = rng.uniform(0.1, 1.0, len(cfg.fractions))
        c = esa.SparsityConfig(cfg.fractions, tuple(lam))
        up = rng.normal(size=(q.shape[0], v.shape[1]))
        g = esa.sparse_attention_grads(q, k, v, c, up)
        worst_attn = max(
            worst_attn,
            grad_check(lambda x: (esa.sparse_attention(x, k, v, c) * up).sum(), q, g.d_q),
            grad_check(lambda x: (esa.sparse_attention(q, x, v, c) * up).sum(), k, g.d_k),
            grad_check(lambda x: (esa.sparse_attention(q, k, x, c) * up).sum(), v, g.d_v),
            grad_check(lambda x: (esa.sparse_attention(q, k, v, esa.SparsityConfig(c.fractions, tuple(x))) * up).sum(),
                       lam, g.d_lambdas),
        )
    worst_stme = 0.0
    for _ in range(points):
        e_prev, e_curr, params, up, tr = _stme_point(rng, cfg)
        g = stme.stme_backward(e_prev, e_curr, params, up, tr)

        def readout(p, a=e_prev, b=e_curr):
            return (stme.stme_forward(a, b, p) * up).sum()

        errs = [
            grad_check(lambda x: readout(params, a=x), e_prev, g.d_prev),
            grad_check(lambda x: readout(params, b=x), e_curr, g.d_curr),
            grad_check(lambda x: readout(replace(params, sparsity=esa.SparsityConfig(
                params.sparsity.fractions, tuple(x)))), np.array(params.sparsity.lambdas),
                g.d_lambdas),
        ]
        for name, t in params.tensors().items():
            errs.append(grad_check(lambda x, name=name: readout(params.with_tensor(name, x)),
                                   t, g.params[name]))
        worst_stme = max(worst_stme, *errs)
    ok = worst_attn <= 1e-5 and worst_stme <= 1e-5
    return ok, (f"{points}+{points} points; max rel err sparse_attention {worst_attn:.2e}, "
                f"stme_forward {worst_stme:.2e} (tol 1e-5)")


def _stme_point(rng, cfg, channels=4):
    while True:
        h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        params, _ = stme.random_params(int(rng.integers(0, 2 ** 63)), channels, cfg)
        lam = tuple(rng.uniform(0.1, 1.0, len(cfg.fractions)))
        params = replace(params, sparsity=esa.SparsityConfig(cfg.fractions, lam))
        e_prev = rng.normal(size=(channels, h, w))
        e_curr = rng.normal(size=(channels, h, w))
        tr = stme.stme_trace(e_prev, e_curr, params)
        if np.abs(tr.norm_out).min() < 1e-3:
            continue  # too close to the ReLU kink
        if not all(_gap_ok(b.scores, cfg) for b in tr.branches):
            continue
        return e_prev, e_curr, params, rng.normal(size=tr.output.shape), tr


def _dyadic(rng, shape, lo, hi, denom):
    return rng.integers(lo * denom, hi * denom + 1, shape) / denom


def ac8_multi_scale_pool(scale=1.0, seed=8):
    """Inputs and 1x1 weights sit on dyadic grids so every sum is exact."""
    rng = np.random.default_rng(seed)
    bad = []
    for trial in range(_n(200, scale)):
        c = int(rng.choice([4, 8]))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        f = _dyadic(rng, (c, h, w), -8, 8, 16)
        pp = stme.PoolParams(_dyadic(rng, (c, c, 1, 1), -2, 2, 8), _dyadic(rng, (c,), -1, 1, 8))
        for chained in (False, True):
            got = stme.multi_scale_pool(f, pp, chained=chained)
            want = np.array(reference.multi_scale_pool(f, pp.weight, pp.bias, chained=chained))
            if not np.array_equal(got, want):
                bad.append(f"input {trial} (chained={chained}): "
                           f"max diff {np.abs(got - want).max():.3e}")
    const = 1.5
    f = np.full((8, 5, 5), const)
    got = stme.multi_scale_pool(f, stme.PoolParams.identity(8))
    want = np.concatenate([np.full((2, 5, 5), v) for v in (2 * const, 2 * const, 3 * const, 3 * const)])
    if not np.array_equal(got, want):
        bad.append("constant field does not give {2c, 2c, 3c, 3c}")
    return not bad, f"{_n(200, scale)} inputs exact + constant field" if not bad else "; ".join(bad[:3])


def golden_frame() -> EventFrame:
    """32 x 24 frame of 400 events drawn from SplitMix64(20240917).

    Each event takes four draws in order: x = u % 32, y = u % 24,
    t = u % 1000, p = +1 if u is odd else -1.
    """
    rng = SplitMix64(20240917)
    geom = SensorGeometry(32, 24)
    cols = [[], [], [], []]
    for _ in range(400):
        x, y, t, p = (rng.next_u64() for _ in range(4))
        cols[0].append(t % 1000)
        cols[1].append(x % 32)
        cols[2].append(y % 24)
        cols[3].append(1 if p & 1 else -1)
    return accumulate(EventStream(*cols, geom.width, geom.height).stable_sorted(), geom)


def ac9_codecs(scale=1.0, seed=9):
    rng = np.random.default_rng(seed)
    bad = []
    for trial in range(_n(1000, scale)):
        geom = SensorGeometry(int(rng.integers(1, 65536)), int(rng.integers(1, 65536)))
        size = int(rng.integers(0, 200))
        t = rng.integers(0, 2 ** 40, size)
        t[rng.random(size) < 0.3] = 12345  # equal timestamps exercise stable order
        s = EventStream(t, rng.integers(0, geom.width, size), rng.integers(0, geom.height, size),
                        rng.choice([-1, 1], size), geom.width, geom.height)
        sorted_s = s.stable_sorted()
        if parse_binary(write_binary(s), geom) != sorted_s:
            bad.append(f"stream {trial}: binary round-trip differs")
        if parse_csv(write_csv(s), geom) != sorted_s:
            bad.append(f"stream {trial}: CSV round-trip differs")
        if parse_binary(write_binary(sorted_s), geom) != sorted_s:
            bad.append(f"stream {trial}: binary round-trip of sorted stream differs")
    tiny = EventFrame(SensorGeometry(3, 2), np.array([[1, 0, -1], [0, 2, 0]]))
    hand = b"P6\n3 2\n255\n" + bytes([0, 0, 255, 255, 255, 255, 255, 0, 0,
                                      255, 255, 255, 0, 0, 255, 255, 255, 255])
    if encode_ppm(render(tiny)) != hand:
        bad.append("hand-built PPM differs")
    first = encode_ppm(render(golden_frame()))
    second = encode_ppm(render(golden_frame()))
    digest = hashlib.sha256(first).hexdigest()
    if first != second or digest != GOLDEN_PPM_SHA256:
        bad.append(f"golden PPM sha256 {digest} != frozen {GOLDEN_PPM_SHA256}")
    return not bad, f"{_n(1000, scale)} streams x 2 codecs + PPM goldens" if not bad else "; ".join(bad[:3])


def _snapshot(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def ac10_cli_determinism(scale=1.0, seed=10):
    from .pipeline import PipelineConfig, run_split, run_stme

    rng = np.random.default_rng(seed)
    geom = SensorGeometry(64, 48)
    s = random_stream(rng, 3000, geom, 0, 29_999)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        src = tmp / "events.bin"
        src.write_bytes(write_binary(s))
        runs = []
        for r in range(2):
            out = tmp / f"run{r}"
            cfg = PipelineConfig(input=src, out=out, geometry=geom, start_us=0, end_us=30_000,
                                 n=3, seed=1234, cell=8, channels=8)
            run_split(cfg)
            run_stme(cfg)
            runs.append(_snapshot(out))
    same = runs[0] == runs[1]
    return same, f"{len(runs[0])} artifacts byte-identical" if same else "artifacts differ between runs"


CHECKS = {
    "AC1": ("DES conservation", ac1_des_conservation),
    "AC2": ("split/accumulate additivity", ac2_additivity),
    "AC3": ("top-K oracle equivalence", ac3_topk_oracle),
    "AC4": ("dense equivalence", ac4_dense_equivalence),
    "AC5": ("ESA brute-force equivalence", ac5_esa_brute_force),
    "AC6": ("row stochasticity and support nesting", ac6_row_stochastic),
    "AC7": ("gradient checks", ac7_gradients),
    "AC8": ("multi-scale pooling", ac8_multi_scale_pool),
    "AC9": ("codec round-trips and PPM goldens", ac9_codecs),
    "AC10": ("CLI determinism", ac10_cli_determinism),
}
USES_SPARSITY = {"AC5", "AC6", "AC7"}


def run_check(check_id: str, scale: float = 1.0, sparsity: esa.SparsityConfig | None = None):
    name, fn = CHECKS[check_id]
    kwargs = {"scale": scale}
    if sparsity is not None and check_id in USES_SPARSITY:
        kwargs["cfg"] = sparsity
    t0 = time.perf_counter()
    try:
        passed, detail = fn(**kwargs)
    except Exception as exc:  # a crashing check is a failed check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(check_id, name, bool(passed), detail, time.perf_counter() - t0)


def run_all(scale: float = 1.0, sparsity=None, only=None):
    return [run_check(cid, scale, sparsity) for cid in CHECKS if not only or cid in only]


def format_report(results) -> str:
    lines = [f"{'id':<5} {'status':<6} {'time':>7}  check"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.id:<5} {status:<6} {r.seconds:6.2f}s  {r.name}: {r.detail}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
