"""End-to-end event pipeline used by the CLI.

ingest -> split into subframes -> accumulate / render -> featurize ->
multi-scale pool -> STME over consecutive subframe pairs.

Featurizing reduces a polarity-count frame to a coarse grid (mean over
``cell x cell`` blocks, edge blocks zero-padded) and lifts it to ``channels``
feature channels with a seeded per-channel affine map. Attention is
quadratic in the token count, so full-resolution frames are never fed to
STME directly.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import esa, stme
from .accumulator import accumulate, encode_ppm, frame_to_tensor, render
from .des import DEFAULT_SUBFRAMES, SplitConfig, split, split_to_single
from .errors import ConfigError, ParseError
from .events import DEFAULT_GEOMETRY, EventStream, SensorGeometry, parse_binary, parse_csv
from .numerics import tensor_from_json, tensor_to_json
from .rng import SplitMix64

log = logging.getLogger(__name__)

THREADS_ENV = "EVKIT_THREADS"


@dataclass
class PipelineConfig:
    input: Path
    out: Path
    format: str | None = None  # "csv" | "bin"; inferred from the suffix when None
    geometry: SensorGeometry = DEFAULT_GEOMETRY
    start_us: int | None = None
    end_us: int | None = None
    n: int = DEFAULT_SUBFRAMES
    sparsity: esa.SparsityConfig = field(default_factory=esa.SparsityConfig)
    seed: int = 0
    cell: int = 16
    channels: int = 8
    tie_projections: bool = False
    pool_chained: bool = False
    params_path: Path | None = None
    write_counts: bool = False


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _parallel_map(fn, items):
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_stream(cfg: PipelineConfig) -> EventStream:
    path = Path(cfg.input)
    fmt = cfg.format or {".csv": "csv", ".bin": "bin"}.get(path.suffix.lower())
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"cannot infer event format of {path}; pass --format csv|bin")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read input: {exc.strerror}", None, str(path)) from exc
    parser = parse_csv if fmt == "csv" else parse_binary
    return parser(data, cfg.geometry, source=str(path))


def resolve_window(stream: EventStream, cfg: PipelineConfig) -> SplitConfig:
    """Explicit window if given; otherwise the stream's own span.

    The derived window is ``[t_first, t_last + 1]``, widened so it holds at
    least ``n`` microseconds; an empty stream starts at 0.
    """
    start, end = cfg.start_us, cfg.end_us
    if start is None:
        start = int(stream.t.min()) if len(stream) else 0
    if end is None:
        last = int(stream.t.max()) + 1 if len(stream) else start + 1
        end = max(last, start + cfg.n)
    return SplitConfig(start, end, cfg.n)


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def subframes(stream: EventStream, window: SplitConfig):
    clusters = split(stream, window)
    frames = _parallel_map(
        lambda i: accumulate(clusters.clusters[i], stream.geometry, clusters.window(i)),
        range(clusters.n))
    return clusters, frames


def run_split(cfg: PipelineConfig) -> dict:
    stream = load_stream(cfg)
    window = resolve_window(stream, cfg)
    clusters, frames = subframes(stream, window)
    single = split_to_single(stream, window)
    single_frame = accumulate(single.clusters[0], stream.geometry, single.window(0))

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        (out / f"subframe_{i:03d}.ppm").write_bytes(encode_ppm(render(frame)))
    (out / "single_frame.ppm").write_bytes(encode_ppm(render(single_frame)))
    stats = {
        "event_count": len(stream),
        "dropped": clusters.dropped,
        "per_cluster_counts": clusters.counts(),
        "boundaries": list(clusters.boundaries),
        "n": clusters.n,
        "geometry": [cfg.geometry.width, cfg.geometry.height],
    }
    _dump_json(out / "stats.json", stats)
    if cfg.write_counts:
        _dump_json(out / "counts.json", {
            "subframes": [f.counts.tolist() for f in frames],
            "single_frame": single_frame.counts.tolist(),
        })
    log.info("split %d events into %s (dropped %d)", len(stream), clusters.counts(),
             clusters.dropped)
    return stats


@dataclass(frozen=True, eq=False)
class LiftParams:
    weight: np.ndarray  # C
    bias: np.ndarray  # C

    @classmethod
    def random(cls, rng: SplitMix64, channels: int) -> "LiftParams":
        return cls(rng.uniform(-1.0, 1.0, (channels,)), rng.uniform(-0.1, 0.1, (channels,)))


def featurize(counts: np.ndarray, cell: int, lift: LiftParams) -> np.ndarray:
    """1 x H x W count tensor -> C x ceil(H/cell) x ceil(W/cell) features."""
    if cell < 1:
        raise ConfigError(f"cell must be >= 1, got {cell}")
    plane = np.asarray(counts, dtype=np.float64)[0]
    h, w = plane.shape
    hc, wc = -(-h // cell), -(-w // cell)
    padded = np.zeros((hc * cell, wc * cell))
    padded[:h, :w] = plane
    coarse = padded.reshape(hc, cell, wc, cell).mean(axis=(1, 3))
    return lift.weight[:, None, None] * coarse[None] + lift.bias[:, None, None]


def model_params(cfg: PipelineConfig):
    """``(STMEParams, PoolParams, LiftParams)``; seeded unless a file is given.

    Seeded draws follow :func:`evkit.stme.random_params` and then the lift
    weight and bias, all from one :class:`SplitMix64` stream.
    """
    if cfg.channels < 4 or cfg.channels % 4:
        raise ConfigError(f"channels must be a positive multiple of 4, got {cfg.channels}")
    rng = SplitMix64(cfg.seed)
    stme_p, pool_p = stme.random_params(rng, cfg.channels, cfg.sparsity, cfg.tie_projections)
    lift = LiftParams.random(rng, cfg.channels)
    if cfg.params_path is not None:
        doc = json.loads(Path(cfg.params_path).read_text(encoding="utf-8"))
        stme_p, pool_p = stme.params_from_json(doc)
        if "lift" in doc:
            lift = LiftParams(tensor_from_json(doc["lift"]["weight"]),
                              tensor_from_json(doc["lift"]["bias"]))
        if stme_p.channels != cfg.channels:
            raise ConfigError(f"parameter file has {stme_p.channels} channels, "
                              f"--channels is {cfg.channels}")
    return stme_p, pool_p, lift


def stme_features(stream: EventStream, window: SplitConfig, cfg: PipelineConfig):
    """Pooled features per subframe and the STME trace of each consecutive pair."""
    if window.n < 2:
        raise ConfigError(f"STME needs at least 2 subframes, got n={window.n}")
    stme_p, pool_p, lift = model_params(cfg)
    _, frames = subframes(stream, window)
    pooled = [stme.multi_scale_pool(featurize(frame_to_tensor(f), cfg.cell, lift), pool_p,
                                    chained=cfg.pool_chained)
              for f in frames]
    traces = _parallel_map(lambda i: stme.stme_trace(pooled[i - 1], pooled[i], stme_p),
                           range(1, len(pooled)))
    return (stme_p, pool_p, lift), pooled, traces


def run_stme(cfg: PipelineConfig) -> dict:
    stream = load_stream(cfg)
    window = resolve_window(stream, cfg)
    (stme_p, pool_p, lift), pooled, traces = stme_features(stream, window, cfg)

    pairs, stats = [], []
    for i, tr in enumerate(traces, start=1):
        pairs.append({
            "prev": i - 1,
            "curr": i,
            "concat_half_diff_norm": tr.half_diff_norm,
            "output": tensor_to_json(tr.output),
        })
        branch_stats = {}
        for name, branch in zip(("self", "cross"), tr.branches):
            branch_stats[name] = {
                "retained_mass": esa.retained_mass(branch),
                "kept_per_row": [esa.keep_count(f, branch.scores.shape[1])
                                 for f in stme_p.sparsity.fractions],
            }
        stats.append({"prev": i - 1, "curr": i, **branch_stats})

    c, h, w = pooled[0].shape
    features = {
        "channels": c,
        "grid": [h, w],
        "cell": cfg.cell,
        "seed": cfg.seed,
        "boundaries": list(window.boundaries()),
        "pairs": pairs,
    }
    sparsity = {**stme_p.sparsity.to_json(), "tokens": h * w, "pairs": stats}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "features.json", features)
    _dump_json(out / "sparsity_stats.json", sparsity)
    doc = stme.params_to_json(stme_p, pool_p)
    doc["lift"] = {"weight": tensor_to_json(lift.weight), "bias": tensor_to_json(lift.bias)}
    _dump_json(out / "params.json", doc)
    return {"features": features, "sparsity": sparsity}
