"""Slow, loop-based reference implementations.

Nothing here calls into the vectorized kernels; each routine is written
directly from the definition so it can serve as an independent oracle.
Inputs may be numpy arrays or nested lists; outputs are nested lists of
Python floats (or ints for event data).
"""

from __future__ import annotations

import math
from fractions import Fraction


def _lists(a):
    return a.tolist() if hasattr(a, "tolist") else a


def matmul(a, b):
    a, b = _lists(a), _lists(b)
    m, k, n = len(a), len(b), len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i][l] * b[l][j]
            out[i][j] = acc
    return out


def transpose(a):
    a = _lists(a)
    return [list(col) for col in zip(*a)]


def softmax_row(row):
    row = _lists(row)
    finite = [v for v in row if v != -math.inf]
    top = max(finite)
    ex = [0.0 if v == -math.inf else math.exp(v - top) for v in row]
    total = sum(ex)
    return [e / total for e in ex]


def conv2d(x, w, b):
    x, w, b = _lists(x), _lists(w), _lists(b)
    c_in, h, wd = len(x), len(x[0]), len(x[0][0])
    c_out, k = len(w), len(w[0][0])
    r = k // 2
    out = [[[0.0] * wd for _ in range(h)] for _ in range(c_out)]
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            yy, xx = i + di - r, j + dj - r
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[o][c][di][dj] * x[c][yy][xx]
                out[o][i][j] = acc
    return out


def maxpool2d(x, k):
    x = _lists(x)
    h, wd = len(x[0]), len(x[0][0])
    r = k // 2
    out = []
    for ch in x:
        plane = []
        for i in range(h):
            row = []
            for j in range(wd):
                best = -math.inf
                for yy in range(max(0, i - r), min(h, i + r + 1)):
                    for xx in range(max(0, j - r), min(wd, j + r + 1)):
                        if ch[yy][xx] > best:
                            best = ch[yy][xx]
                row.append(best)
            plane.append(row)
        out.append(plane)
    return out


def add(a, b):
    if isinstance(a, list):
        return [add(u, v) for u, v in zip(a, b)]
    return a + b


def multi_scale_pool(f, weight, bias, chained=False):
    """Four-group cascade, 1x1 convolution and residual, group by group."""
    f = _lists(f)
    g = len(f) // 4
    x1, x2, x3, x4 = f[:g], f[g:2 * g], f[2 * g:3 * g], f[3 * g:]
    block1 = maxpool2d(x1, 3)
    block2 = maxpool2d(x2, 5)
    block3 = maxpool2d(add(x3, block2), 7)
    feed = block3 if chained else maxpool2d(x3, 7)
    block4 = maxpool2d(add(x4, feed), 9)
    return add(conv2d(block1 + block2 + block3 + block4, weight, bias), f)


def topk_row(row, fraction):
    """Full sort by (score desc, column asc); keep ceil(fraction * len).

    ``fraction`` is taken at its exact binary value, so pass a Fraction for
    values such as 4/5.
    """
    row = _lists(row)
    kk = max(1, math.ceil(Fraction(fraction) * len(row)))
    ranked = sorted(range(len(row)), key=lambda j: (-row[j], j))
    keep = set(ranked[:kk])
    return [1 if j in keep else 0 for j in range(len(row))]


def sparse_attention(q, k, v, fractions, lambdas):
    q, k, v = _lists(q), _lists(k), _lists(v)
    d = len(q[0])
    scale = math.sqrt(d)
    scores = [[sum(qi[t] * kj[t] for t in range(d)) / scale for kj in k] for qi in q]
    lq, lk = len(q), len(k)
    total = [[0.0] * lk for _ in range(lq)]
    for frac, lam in zip(fractions, lambdas):
        for i in range(lq):
            mask = topk_row(scores[i], frac)
            masked = [s if m else -math.inf for s, m in zip(scores[i], mask)]
            probs = softmax_row(masked)
            for j in range(lk):
                total[i][j] += lam * probs[j]
    return matmul(total, v)


def dense_attention(q, k, v):
    return sparse_attention(q, k, v, [Fraction(1)], [1.0])


def boundaries(start, end, n):
    span = end - start
    return [start + math.floor(Fraction(i * span, n) + Fraction(1, 2)) for i in range(n + 1)]


def split(events, start, end, n):
    """Per-event boundary scan; ``events`` are (x, y, t, p) tuples."""
    b = boundaries(start, end, n)
    clusters = [[] for _ in range(n)]
    dropped = 0
    for e in events:
        t = e[2]
        placed = False
        for i in range(n):
            lo, hi = b[i], b[i + 1]
            if lo <= t < hi or (i == n - 1 and t == hi):
                clusters[i].append(e)
                placed = True
                break
        if not placed:
            dropped += 1
    return clusters, b, dropped


def accumulate(events, width, height):
    grid = [[0] * width for _ in range(height)]
    for x, y, _t, p in events:
        grid[y][x] += p
    return grid


def parse_csv_lines(text):
    """Independent line-split parse to (x, y, t, p) tuples, file order."""
    out = []
    for line in text.split("\n"):
        line = line.strip()
        if not line or line == "t,x,y,p":
            continue
        t, x, y, p = line.split(",")
        out.append((int(x), int(y), int(t), int(p)))
    return out
