"""Spatio-temporal motion entanglement block and multiple-scale pooling.

STME takes the features of two consecutive subframes, ``e_prev`` and
``e_curr`` (C x H x W each). Both are flattened to (H*W) x C token matrices.
The query comes from ``e_prev`` alone and is shared by two sparse-attention
branches: self-attention over ``e_prev`` and cross-attention onto
``e_curr``. The branch outputs are concatenated on the channel axis (self
first) and fused by a 3x3 convolution, batch norm and ReLU back to C
channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import esa
from .errors import DimensionError
from .numerics import (
    DEFAULT_BN_EPS,
    batchnorm,
    batchnorm_backward,
    conv2d,
    conv2d_backward,
    maxpool2d,
    relu,
    relu_backward,
    tensor_from_json,
    tensor_to_json,
)
from .rng import SplitMix64

POOL_KERNELS = (3, 5, 7, 9)


def flatten_spatial(f: np.ndarray) -> np.ndarray:
    """C x H x W -> (H*W) x C; row ``y*W + x`` holds pixel (x, y)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3:
        raise DimensionError(f"feature map must be C x H x W, got {list(f.shape)}")
    c = f.shape[0]
    return f.reshape(c, -1).T.copy()


def unflatten_spatial(tokens: np.ndarray, height: int, width: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] != height * width:
        raise DimensionError(f"{list(tokens.shape)} tokens do not tile {height}x{width}")
    return tokens.T.reshape(tokens.shape[1], height, width).copy()


@dataclass(frozen=True, eq=False)
class STMEParams:
    w_q: np.ndarray
    w_k_prev: np.ndarray
    w_v_prev: np.ndarray
    w_k_curr: np.ndarray
    w_v_curr: np.ndarray
    conv_weight: np.ndarray  # C x 2C x 3 x 3
    conv_bias: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_eps: float = DEFAULT_BN_EPS
    sparsity: esa.SparsityConfig = field(default_factory=esa.SparsityConfig)

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    def check(self, c: int):
        for name in ("w_q", "w_k_prev", "w_v_prev", "w_k_curr", "w_v_curr"):
            if getattr(self, name).shape != (c, c):
                raise DimensionError(f"{name} must be {c}x{c}, got {list(getattr(self, name).shape)}")
        if self.conv_weight.shape != (c, 2 * c, 3, 3):
            raise DimensionError(f"conv_weight must be [{c}, {2 * c}, 3, 3], "
                                 f"got {list(self.conv_weight.shape)}")
        for name in ("conv_bias", "bn_mean", "bn_var", "bn_gamma", "bn_beta"):
            if getattr(self, name).shape != (c,):
                raise DimensionError(f"{name} must have shape [{c}]")

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}

    def with_tensor(self, name: str, value) -> "STMEParams":
        return replace(self, **{name: np.asarray(value, dtype=np.float64)})


@dataclass(frozen=True, eq=False)
class PoolParams:
    weight: np.ndarray  # C x C x 1 x 1
    bias: np.ndarray

    @classmethod
    def identity(cls, c: int) -> "PoolParams":
        return cls(np.eye(c).reshape(c, c, 1, 1), np.zeros(c))


@dataclass(frozen=True, eq=False)
class STMETrace:
    tokens_prev: np.ndarray
    tokens_curr: np.ndarray
    query: np.ndarray
    keys: tuple[np.ndarray, np.ndarray]
    values: tuple[np.ndarray, np.ndarray]
    branches: tuple[esa.AttentionTrace, esa.AttentionTrace]  # self, cross
    concat: np.ndarray
    conv_out: np.ndarray
    norm_out: np.ndarray
    output: np.ndarray

    @property
    def half_diff_norm(self) -> float:
        """L2 distance between the self and cross halves of the concat."""
        c = self.concat.shape[0] // 2
        return float(np.linalg.norm(self.concat[:c] - self.concat[c:]))


def stme_trace(e_prev, e_curr, params: STMEParams) -> STMETrace:
    e_prev = np.asarray(e_prev, dtype=np.float64)
    e_curr = np.asarray(e_curr, dtype=np.float64)
    if e_prev.ndim != 3 or e_prev.shape != e_curr.shape:
        raise DimensionError(f"e_prev {list(e_prev.shape)} and e_curr {list(e_curr.shape)} "
                             "must be equal-shaped C x H x W maps")
    c, h, w = e_prev.shape
    params.check(c)
    xp = flatten_spatial(e_prev)
    xc = flatten_spatial(e_curr)
    q = xp @ params.w_q
    k1, v1 = xp @ params.w_k_prev, xp @ params.w_v_prev
    k2, v2 = xc @ params.w_k_curr, xc @ params.w_v_curr
    # branches are independent; run sequentially for a fixed reduction order
    a = esa.sparse_attention_trace(q, k1, v1, params.sparsity)
    b = esa.sparse_attention_trace(q, k2, v2, params.sparsity)
    cat = np.concatenate([unflatten_spatial(a.output, h, w), unflatten_spatial(b.output, h, w)])
    z = conv2d(cat, params.conv_weight, params.conv_bias)
    y = batchnorm(z, params.bn_mean, params.bn_var, params.bn_gamma, params.bn_beta, params.bn_eps)
    return STMETrace(xp, xc, q, (k1, k2), (v1, v2), (a, b), cat, z, y, relu(y))


def stme_forward(e_prev, e_curr, params: STMEParams) -> np.ndarray:
    return stme_trace(e_prev, e_curr, params).output


@dataclass(frozen=True, eq=False)
class STMEGrads:
    d_prev: np.ndarray
    d_curr: np.ndarray
    params: dict[str, np.ndarray]  # keyed like STMEParams.tensors()
    d_lambdas: np.ndarray
    tied: bool


def stme_backward(e_prev, e_curr, params: STMEParams, upstream,
                  trace: STMETrace | None = None) -> STMEGrads:
    """Analytic gradients of ``sum(upstream * stme_forward(...))``.

    Top-K masks are treated as constants and ReLU's derivative at 0 as 0.
    """
    tr = trace or stme_trace(e_prev, e_curr, params)
    c, h, w = tr.output.shape
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tr.output.shape:
        raise DimensionError(f"upstream {list(g.shape)} != output {list(tr.output.shape)}")
    d_y = relu_backward(tr.norm_out, g)
    d_z, d_mean, d_var, d_gamma, d_beta = batchnorm_backward(
        tr.conv_out, params.bn_mean, params.bn_var, params.bn_gamma, d_y, params.bn_eps)
    d_cat, d_cw, d_cb = conv2d_backward(tr.concat, params.conv_weight, d_z)
    ga = esa.sparse_attention_backward(tr.branches[0], tr.query, tr.keys[0], tr.values[0],
                                       params.sparsity, flatten_spatial(d_cat[:c]))
    gb = esa.sparse_attention_backward(tr.branches[1], tr.query, tr.keys[1], tr.values[1],
                                       params.sparsity, flatten_spatial(d_cat[c:]))
    xp, xc = tr.tokens_prev, tr.tokens_curr
    d_q = ga.d_q + gb.d_q
    grads = {
        "w_q": xp.T @ d_q,
        "w_k_prev": xp.T @ ga.d_k,
        "w_v_prev": xp.T @ ga.d_v,
        "w_k_curr": xc.T @ gb.d_k,
        "w_v_curr": xc.T @ gb.d_v,
        "conv_weight": d_cw,
        "conv_bias": d_cb,
        "bn_mean": d_mean,
        "bn_var": d_var,
        "bn_gamma": d_gamma,
        "bn_beta": d_beta,
    }
    d_xp = d_q @ params.w_q.T + ga.d_k @ params.w_k_prev.T + ga.d_v @ params.w_v_prev.T
    d_xc = gb.d_k @ params.w_k_curr.T + gb.d_v @ params.w_v_curr.T
    return STMEGrads(unflatten_spatial(d_xp, h, w), unflatten_spatial(d_xc, h, w), grads,
                     ga.d_lambdas + gb.d_lambdas, ga.tied or gb.tied)


def pool_groups(f, chained: bool = False) -> tuple[np.ndarray, ...]:
    """Max-pool the four channel groups with kernels 3, 5, 7, 9.

    Returns the four pooled blocks that are concatenated before the 1x1
    convolution. With ``G_i = maxpool(x_i, k_i)`` the blocks are
    ``G_1, G_2, maxpool(x_3 + G_2, 7), maxpool(x_4 + G_3, 9)``.
    With ``chained=True`` the third block itself is what feeds group 4,
    i.e. ``maxpool(x_4 + maxpool(x_3 + G_2, 7), 9)``.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] % 4:
        raise DimensionError(f"pooling needs C x H x W with C divisible by 4, got {list(f.shape)}")
    x1, x2, x3, x4 = np.split(f, 4, axis=0)
    k1, k2, k3, k4 = POOL_KERNELS
    g1 = maxpool2d(x1, k1)
    g2 = maxpool2d(x2, k2)
    y3 = maxpool2d(x3 + g2, k3)
    g3 = y3 if chained else maxpool2d(x3, k3)
    y4 = maxpool2d(x4 + g3, k4)
    return g1, g2, y3, y4


def multi_scale_pool(f, params: PoolParams, chained: bool = False) -> np.ndarray:
    """Pooled groups -> 1x1 convolution -> residual add of the input."""
    f = np.asarray(f, dtype=np.float64)
    pooled = np.concatenate(pool_groups(f, chained))
    return conv2d(pooled, params.weight, params.bias) + f


def random_params(seed: int | SplitMix64, channels: int, sparsity: esa.SparsityConfig | None = None,
                  tie_projections: bool = False):
    """Seeded ``(STMEParams, PoolParams)`` drawn from :class:`SplitMix64`.

    ``seed`` may also be a generator, which is advanced in place.

    Draw order: pool weight, pool bias, w_q, w_k_prev, w_v_prev, w_k_curr,
    w_v_curr, conv weight, conv bias, bn gamma, bn beta, bn mean, bn var.
    Weights are U(-a, a) with ``a = 1/sqrt(fan_in)``; gamma and var are
    U(0.5, 1.5), beta and mean U(-0.1, 0.1). With ``tie_projections`` the
    current-subframe key/value projections are copies of the previous ones
    (their draws are still consumed).
    """
    c = channels
    rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)

    def weights(shape, fan_in):
        a = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-a, a, shape)

    pool = PoolParams(weights((c, c, 1, 1), c), weights((c,), c))
    proj = [weights((c, c), c) for _ in range(5)]
    if tie_projections:
        proj[3], proj[4] = proj[1].copy(), proj[2].copy()
    conv_w = weights((c, 2 * c, 3, 3), 2 * c * 9)
    conv_b = weights((c,), 2 * c * 9)
    gamma = rng.uniform(0.5, 1.5, (c,))
    beta = rng.uniform(-0.1, 0.1, (c,))
    mean = rng.uniform(-0.1, 0.1, (c,))
    var = rng.uniform(0.5, 1.5, (c,))
    stme = STMEParams(*proj, conv_w, conv_b, mean, var, gamma, beta,
                      sparsity=sparsity or esa.SparsityConfig())
    return stme, pool


def params_to_json(stme: STMEParams, pool: PoolParams) -> dict:
    t = tensor_to_json
    return {
        "projections": {name: t(getattr(stme, name)) for name in
                        ("w_q", "w_k_prev", "w_v_prev", "w_k_curr", "w_v_curr")},
        "conv": {"weight": t(stme.conv_weight), "bias": t(stme.conv_bias)},
        "batchnorm": {"mean": t(stme.bn_mean), "var": t(stme.bn_var),
                      "gamma": t(stme.bn_gamma), "beta": t(stme.bn_beta), "eps": stme.bn_eps},
        "pool": {"weight": t(pool.weight), "bias": t(pool.bias)},
        "sparsity": stme.sparsity.to_json(),
    }


def params_from_json(doc: dict):
    t = tensor_from_json
    try:
        proj = doc["projections"]
        bn = doc["batchnorm"]
        stme = STMEParams(
            t(proj["w_q"]), t(proj["w_k_prev"]), t(proj["w_v_prev"]),
            t(proj["w_k_curr"]), t(proj["w_v_curr"]),
            t(doc["conv"]["weight"]), t(doc["conv"]["bias"]),
            t(bn["mean"]), t(bn["var"]), t(bn["gamma"]), t(bn["beta"]),
            float(bn.get("eps", DEFAULT_BN_EPS)),
            esa.SparsityConfig.from_json(doc["sparsity"]),
        )
        pool = PoolParams(t(doc["pool"]["weight"]), t(doc["pool"]["bias"]))
    except KeyError as exc:
        raise DimensionError(f"parameter document is missing {exc}") from exc
    stme.check(stme.channels)
    c = stme.channels
    if pool.weight.shape != (c, c, 1, 1) or pool.bias.shape != (c,):
        raise DimensionError(f"pool weight must be [{c}, {c}, 1, 1] with bias [{c}]")
    return stme, pool
