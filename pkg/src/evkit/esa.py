"""Event-based sparse attention.

Scores ``S = Q K^T / sqrt(d)`` are top-K masked once per sparsity level,
each masked matrix is row-softmaxed, the per-level attention matrices are
summed with weights ``lambdas`` and the sum is applied to ``V``::

    out = (sum_i lambda_i * softmax(mask_i(S))) @ V

Top-K is taken per row with ``K = ceil(fraction * L_k)``; ties at the cut go
to the lowest column index. The summed matrix is not renormalized.
"""

from __future__ import annotations

import math
import numbers
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DimensionError, NumericFailureError
from .numerics import softmax_rows, softmax_rows_backward

DEFAULT_FRACTIONS = (1 / 2, 2 / 3, 3 / 4, 4 / 5)
# Floats are read as the nearest rational with a bounded denominator so that
# 0.8 * 5 gives K = 4, not 5.
_MAX_DENOMINATOR = 10 ** 6


class TieWarning(RuntimeWarning):
    """Top-K selection is ambiguous at the cut; gradient holds the selection fixed."""


def _uniform(n):
    return tuple(1.0 / n for _ in range(n))


@dataclass(frozen=True)
class SparsityConfig:
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    lambdas: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        lam = _uniform(len(fr)) if self.lambdas is None else tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lam)
        if not fr:
            raise ConfigError("at least one sparsity level is required")
        if len(lam) != len(fr):
            raise ConfigError(f"{len(fr)} fractions but {len(lam)} lambdas")
        for f in fr:
            check_fraction(f)
        if not all(math.isfinite(v) for v in lam):
            raise ConfigError(f"lambdas must be finite, got {lam}")

    @classmethod
    def dense(cls):
        return cls((1.0,), (1.0,))

    def to_json(self):
        return {"fractions": list(self.fractions), "lambdas": list(self.lambdas)}

    @classmethod
    def from_json(cls, obj):
        return cls(tuple(obj["fractions"]), tuple(obj["lambdas"]))


def check_fraction(fraction):
    if isinstance(fraction, bool) or not (isinstance(fraction, numbers.Real) and 0 < fraction <= 1):
        raise ConfigError(f"top-K fraction must lie in (0, 1], got {fraction!r}")


def keep_count(fraction, length: int) -> int:
    """Number of keys kept per row: ``ceil(fraction * length)``, at least 1."""
    check_fraction(fraction)
    exact = Fraction(fraction).limit_denominator(_MAX_DENOMINATOR)
    return min(length, max(1, math.ceil(exact * length)))


def _scores(q, k):
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionError(f"Q {list(q.shape)} and K {list(k.shape)} need a shared last axis")
    return q @ k.T / math.sqrt(q.shape[1])


def _check_qkv(q, k, v):
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    for name, a in (("Q", q), ("K", k), ("V", v)):
        if a.ndim != 2 or min(a.shape) < 1:
            raise DimensionError(f"{name} must be a non-empty matrix, got {list(a.shape)}")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"Q {list(q.shape)} and K {list(k.shape)} differ in width")
    if v.shape[0] != k.shape[0]:
        raise DimensionError(f"V {list(v.shape)} needs one row per key row of K {list(k.shape)}")
    return q, k, v


def _order(scores):
    # stable sort of negated scores: equal scores keep ascending column order
    return np.argsort(-scores, axis=1, kind="stable")


def topk_mask(scores, fraction) -> np.ndarray:
    """Boolean mask with exactly K True entries per row at the K best scores."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise DimensionError(f"scores must be 2-D, got {list(s.shape)}")
    if not np.isfinite(s).all():
        raise NumericFailureError("scores must be finite")
    kk = keep_count(fraction, s.shape[1])
    mask = np.zeros(s.shape, dtype=bool)
    np.put_along_axis(mask, _order(s)[:, :kk], True, axis=1)
    return mask


def apply_mask(scores, mask) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if s.shape != mask.shape:
        raise DimensionError(f"scores {list(s.shape)} and mask {list(mask.shape)} differ")
    return np.where(mask, s, -np.inf)


def boundary_tied(scores, fraction, tol: float = 0.0) -> bool:
    """True if some row has its K-th and (K+1)-th best scores within ``tol``."""
    s = np.asarray(scores, dtype=np.float64)
    kk = keep_count(fraction, s.shape[1])
    if kk >= s.shape[1]:
        return False
    srt = -np.sort(-s, axis=1)
    return bool((srt[:, kk - 1] - srt[:, kk] <= tol).any())


@dataclass(frozen=True, eq=False)
class AttentionTrace:
    scores: np.ndarray
    masks: tuple[np.ndarray, ...]
    levels: tuple[np.ndarray, ...]  # per-level softmaxed masked matrices
    attention: np.ndarray  # lambda-weighted sum of levels
    output: np.ndarray


def sparse_attention_trace(q, k, v, cfg: SparsityConfig) -> AttentionTrace:
    q, k, v = _check_qkv(q, k, v)
    s = _scores(q, k)
    masks = tuple(topk_mask(s, f) for f in cfg.fractions)
    levels = tuple(softmax_rows(apply_mask(s, m)) for m in masks)
    attn = np.zeros_like(s)
    for lam, level in zip(cfg.lambdas, levels):
        attn += lam * level
    return AttentionTrace(s, masks, levels, attn, attn @ v)


def sparse_attention(q, k, v, cfg: SparsityConfig | None = None) -> np.ndarray:
    return sparse_attention_trace(q, k, v, cfg or SparsityConfig()).output


def dense_attention(q, k, v) -> np.ndarray:
    q, k, v = _check_qkv(q, k, v)
    return softmax_rows(_scores(q, k)) @ v


def retained_mass(trace: AttentionTrace) -> list[float]:
    """Per level, the mean share of dense softmax mass that survives the mask."""
    dense = softmax_rows(trace.scores)
    return [float((dense * m).sum(axis=1).mean()) for m in trace.masks]


@dataclass(frozen=True, eq=False)
class AttentionGrads:
    d_q: np.ndarray
    d_k: np.ndarray
    d_v: np.ndarray
    d_lambdas: np.ndarray
    tied: bool


def sparse_attention_backward(trace: AttentionTrace, q, k, v, cfg: SparsityConfig, upstream):
    """Gradients from a stored forward trace; masks are held constant."""
    q, k, v = _check_qkv(q, k, v)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != trace.output.shape:
        raise DimensionError(f"upstream {list(g.shape)} != output {list(trace.output.shape)}")
    d_v = trace.attention.T @ g
    d_attn = g @ v.T
    d_lam = np.array([(d_attn * level).sum() for level in trace.levels])
    d_s = np.zeros_like(trace.scores)
    for lam, level in zip(cfg.lambdas, trace.levels):
        d_s += softmax_rows_backward(level, lam * d_attn)
    scale = 1.0 / math.sqrt(q.shape[1])
    d_q = scale * d_s @ k
    d_k = scale * d_s.T @ q
    tied = any(boundary_tied(trace.scores, f) for f in cfg.fractions)
    return AttentionGrads(d_q, d_k, d_v, d_lam, tied)


def sparse_attention_grads(q, k, v, cfg: SparsityConfig, upstream) -> AttentionGrads:
    """Gradients of ``sum(upstream * sparse_attention(q, k, v, cfg))``.

    If a row is tied at a top-K cut the selection made by the forward pass is
    kept, ``tied`` is set and a :class:`TieWarning` is emitted.
    """
    trace = sparse_attention_trace(q, k, v, cfg)
    grads = sparse_attention_backward(trace, q, k, v, cfg, upstream)
    if grads.tied:
        warnings.warn("top-K selection tied at the cut; gradient uses the forward selection",
                      TieWarning, stacklevel=2)
    return grads
