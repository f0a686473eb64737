import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evkit import reference as ref
from evkit.errors import ConfigError, DimensionError
from evkit.esa import (
    SparsityConfig,
    TieWarning,
    apply_mask,
    dense_attention,
    keep_count,
    retained_mass,
    sparse_attention,
    sparse_attention_grads,
    sparse_attention_trace,
    topk_mask,
)
from evkit.numerics import grad_check, softmax_rows


def test_topk_examples():
    assert topk_mask([[0.9, 0.1, 0.5, 0.3]], 0.5).astype(int).tolist() == [[1, 0, 1, 0]]
    assert topk_mask(np.random.default_rng(0).normal(size=(3, 5)), 1.0).all()
    assert topk_mask([[0.5, 0.5, 0.5]], 2 / 3).astype(int).tolist() == [[1, 1, 0]]


@pytest.mark.parametrize("fraction", [0, -0.1, 1.5, float("nan"), True])
def test_topk_rejects_bad_fraction(fraction):
    with pytest.raises(ConfigError):
        topk_mask([[1.0, 2.0]], fraction)


@pytest.mark.parametrize("fraction,length,k", [(0.8, 5, 4), (4 / 5, 10, 8), (2 / 3, 3, 2),
                                               (0.5, 3, 2), (0.5, 1, 1), (1e-9, 7, 1),
                                               (0.667, 3, 3), (Fraction(3, 4), 4, 3)])
def test_keep_count(fraction, length, k):
    assert keep_count(fraction, length) == k


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=40),
       st.sampled_from([Fraction(1, 2), Fraction(2, 3), Fraction(3, 4), Fraction(4, 5), Fraction(1)]))
def test_topk_matches_sort_oracle_with_ties(row, frac):
    row = np.array(row, dtype=float)
    got = topk_mask(row[None], float(frac))[0].astype(int).tolist()
    assert got == ref.topk_row(row, frac)
    assert sum(got) == math.ceil(frac * len(row))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 20)),
              elements=st.floats(-5, 5, allow_nan=False)))
def test_support_nesting_and_argmax(scores):
    masks = [topk_mask(scores, f) for f in (0.5, 2 / 3, 0.75, 0.8, 1.0)]
    for small, big in zip(masks, masks[1:]):
        assert not (small & ~big).any()
    first_max = scores.argmax(axis=1)
    for m in masks:
        assert m[np.arange(scores.shape[0]), first_max].all()


def test_apply_mask(rng):
    s = rng.normal(size=(4, 6))
    np.testing.assert_array_equal(apply_mask(s, np.ones_like(s, dtype=bool)), s)
    mask = topk_mask(s, 0.5)
    p = softmax_rows(apply_mask(s, mask))
    assert (p[~mask] == 0).all() and (p[mask] > 0).all()
    with pytest.raises(DimensionError):
        apply_mask(s, mask[:, :3])


def test_fraction_one_equals_dense(rng):
    for _ in range(20):
        q, k, v = rng.normal(size=(5, 3)), rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
        np.testing.assert_allclose(sparse_attention(q, k, v, SparsityConfig.dense()),
                                   dense_attention(q, k, v), rtol=0, atol=1e-9)


def test_single_token_gives_lambda_sum_times_v():
    cfg = SparsityConfig((0.5, 1.0), (0.3, 0.9))
    v = np.array([[2.0, -1.0]])
    out = sparse_attention([[0.4, 0.1]], [[1.0, 3.0]], v, cfg)
    np.testing.assert_allclose(out, 1.2 * v, rtol=1e-15)


def test_default_levels_vs_brute_force(rng):
    q, k, v = rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    cfg = SparsityConfig()
    assert cfg.lambdas == (0.25,) * 4
    want = ref.sparse_attention(q, k, v, [Fraction(1, 2), Fraction(2, 3), Fraction(3, 4),
                                          Fraction(4, 5)], [0.25] * 4)
    np.testing.assert_allclose(sparse_attention(q, k, v, cfg), want, rtol=0, atol=1e-10)


def test_dense_attention_examples(rng):
    q = np.linalg.qr(rng.normal(size=(4, 4)))[0]
    np.testing.assert_allclose(dense_attention(q, q, q), ref.dense_attention(q, q, q), atol=1e-12)
    v = rng.normal(size=(1, 3))
    np.testing.assert_allclose(dense_attention(rng.normal(size=(1, 2)), rng.normal(size=(1, 2)), v), v)


def test_shape_errors():
    with pytest.raises(DimensionError):
        sparse_attention(np.ones((2, 3)), np.ones((2, 4)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        dense_attention(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 3)))


def test_config_validation():
    with pytest.raises(ConfigError):
        SparsityConfig((0.5, 0.7), (1.0,))
    with pytest.raises(ConfigError):
        SparsityConfig(())
    with pytest.raises(ConfigError):
        SparsityConfig((0.0,))


def test_key_permutation_invariance(rng):
    q, k, v = rng.normal(size=(4, 3)), rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    perm = rng.permutation(8)
    np.testing.assert_allclose(sparse_attention(q, k[perm], v[perm]), sparse_attention(q, k, v),
                               atol=1e-12)


def test_levels_row_stochastic(rng):
    tr = sparse_attention_trace(rng.normal(size=(5, 4)), rng.normal(size=(9, 4)),
                                rng.normal(size=(9, 4)), SparsityConfig())
    for m, level in zip(tr.masks, tr.levels):
        np.testing.assert_allclose(level.sum(axis=1), 1.0, atol=1e-9)
        assert (level[~m] == 0).all()
    mass = retained_mass(tr)
    assert all(0 < a <= b <= 1 + 1e-12 for a, b in zip(mass, mass[1:]))


def test_lambda_gradient_is_inner_product_with_dense(rng):
    q, k, v = rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    up = rng.normal(size=(3, 2))
    g = sparse_attention_grads(q, k, v, SparsityConfig((1.0,), (0.7,)), up)
    assert g.d_lambdas[0] == pytest.approx((up * dense_attention(q, k, v)).sum(), abs=1e-12)


def test_zero_upstream_gives_zero_gradients(rng):
    q, k, v = rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    g = sparse_attention_grads(q, k, v, SparsityConfig(), np.zeros((3, 2)))
    for arr in (g.d_q, g.d_k, g.d_v, g.d_lambdas):
        assert not arr.any()


def test_gradients_vs_central_differences(rng):
    cfg = SparsityConfig(lambdas=(0.1, 0.4, 0.2, 0.3))
    q, k, v = rng.normal(size=(5, 3)), rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    up = rng.normal(size=(5, 3))
    g = sparse_attention_grads(q, k, v, cfg, up)
    assert not g.tied
    f = lambda a, b, c, lam=cfg: (sparse_attention(a, b, c, lam) * up).sum()
    assert grad_check(lambda x: f(x, k, v), q, g.d_q) <= 1e-5
    assert grad_check(lambda x: f(q, x, v), k, g.d_k) <= 1e-5
    assert grad_check(lambda x: f(q, k, x), v, g.d_v) <= 1e-5
    assert grad_check(lambda x: f(q, k, v, SparsityConfig(cfg.fractions, tuple(x))),
                      np.array(cfg.lambdas), g.d_lambdas) <= 1e-5


def test_tie_flag_and_warning():
    q = np.array([[1.0]])
    k = np.array([[1.0], [1.0], [0.0]])
    with pytest.warns(TieWarning):
        g = sparse_attention_grads(q, k, np.eye(3)[:, :1], SparsityConfig((1 / 3,)), np.ones((1, 1)))
    assert g.tied
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        g = sparse_attention_grads(q, k, np.eye(3)[:, :1], SparsityConfig((2 / 3,)), np.ones((1, 1)))
    assert not g.tied
