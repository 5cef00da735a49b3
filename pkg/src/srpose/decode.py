"""Divide-and-conquer heatmap decoding.

Pool the map into ``s x s`` patches keeping each patch maximum and its
original flat index, run the serial argmax over the much smaller grid of
patch maxima, then gather the fine location from the stored index.
"""
import csv
import time

import numpy as np

from .heatmap import DecodeResult, HeatmapStack, decode_naive, quarter_shift
from .tensor import backend, max_pool_with_indices

BENCH_COLUMNS = ["h", "w", "s", "trials", "naive_ns", "pooled_ns", "candidates_naive", "candidates_pooled", "exact"]


def pooled_decode(stack, s=16, post_shift=False):
    maps = stack.maps
    n, k, h, w = maps.shape
    if s < 1:
        raise ValueError("s must be >= 1")
    values, indices = max_pool_with_indices(maps, s)
    ph, pw = values.shape[2:]
    coarse = backend.kernels.argmax_rows(values.reshape(n * k, ph * pw))
    rows = np.arange(n * k)
    fine = indices.reshape(n * k, -1)[rows, coarse].reshape(n, k)
    score = values.reshape(n * k, -1)[rows, coarse].reshape(n, k).astype(np.float64)
    py, px = np.divmod(fine, w)
    xm, ym = px.astype(np.float64), py.astype(np.float64)
    if post_shift:
        dx, dy = quarter_shift(maps, px, py)
        xm, ym = xm + dx, ym + dy
    empty = ~maps.reshape(n, k, -1).any(axis=-1)
    xm[empty] = (w - 1) / 2.0
    ym[empty] = (h - 1) / 2.0
    return DecodeResult(
        xm * stack.scale,
        ym * stack.scale,
        score,
        method="pooled+shift" if post_shift else "pooled",
        s=s,
        candidates=ph * pw,
        flags=empty,
    )


def candidate_counts(h, w, s):
    return h * w, -(-h // s) * -(-w // s)


def check_exact(stack, naive, pooled):
    """Values must always match; locations must match wherever the max is unique."""
    maps = stack.maps
    n, k = maps.shape[:2]
    flat = maps.reshape(n, k, -1)
    if not np.array_equal(naive.score, pooled.score):
        return False
    peak = flat.max(axis=-1, keepdims=True)
    unique = (flat == peak).sum(axis=-1) == 1
    same = (naive.x == pooled.x) & (naive.y == pooled.y)
    return bool(np.all(same[unique]))


def _time_ns(fn, stack, repeats):
    """Best-of-``repeats`` wall time of one batched call, per channel."""
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(stack)
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best / (stack.maps.shape[0] * stack.maps.shape[1])


def bench_decode(sizes, s_values, trials=100, seed=0, repeats=3):
    """Time naive vs pooled decoding of single-channel maps.

    Per (size, s) row: ns per decoded channel (best of ``repeats`` batched passes),
    serial-argmax candidate counts and the exactness verdict over all
    ``trials`` random maps.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for h, w in sizes:
        maps = rng.random((trials, 1, h, w), dtype=np.float32)
        batch = HeatmapStack(maps, 1.0)
        naive = decode_naive(batch)
        naive_ns = _time_ns(decode_naive, batch, repeats)
        for s in s_values:
            pooled = pooled_decode(batch, s)
            pooled_ns = _time_ns(lambda st: pooled_decode(st, s), batch, repeats)
            cn, cp = candidate_counts(h, w, s)
            rows.append(
                dict(
                    h=h,
                    w=w,
                    s=s,
                    trials=trials,
                    naive_ns=round(naive_ns),
                    pooled_ns=round(pooled_ns),
                    candidates_naive=cn,
                    candidates_pooled=cp,
                    exact=check_exact(batch, naive, pooled),
                )
            )
    return rows


def write_bench_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({**r, "exact": "true" if r["exact"] else "false"})
