"""Timing and analytic cost model for the attention operators.

Multiply-accumulate counts and live-byte estimates are computed from shapes,
never measured, so they reproduce exactly. Wall times are medians of repeats.
"""

import csv
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import sa2d
from .sac import MSACConfig, init_attention, init_msac, init_sac, msac, sac
from .tensor import conv2d

OPERATORS = ("conv2d", "sa2d", "sac", "msac")
BYTES = 8


@dataclass
class BenchRecord:
    operator: str
    N: int
    M: int
    n: int
    m: int
    L: int
    C: int
    d: int
    d_a: int
    d_o: int
    wall_ns: int
    macs: int
    peak_bytes: int
    score_elements: int
    naive_over_patch: float
    note: str = ""


def conv_macs(N, M, n, m, d, filters=1):
    return N * M * n * m * d * filters


def score_elements(N, M):
    return (N * M) ** 2


def head_macs(N, M, n, m, d, d_a, d_o):
    project = conv_macs(N, M, n, m, d, 2 * d_a + d_o)
    return project + score_elements(N, M) * (d_a + d_o)


def sac_macs(N, M, n, m, d, d_a, d_o, C, parallel_conv=True):
    total = C * head_macs(N, M, n, m, d, d_a, d_o) + conv_macs(N, M, 1, 1, C * d_o, d_o)
    if parallel_conv:
        total += conv_macs(N, M, n, m, d, d_o) + conv_macs(N, M, 1, 1, 2 * d_o, d_o)
    return total


def msac_macs(N, M, sizes, d, d_a, d_o, C, parallel_conv=True):
    total = sum(sac_macs(N, M, n, m, d, d_a, d_o, C, parallel_conv) for n, m in sizes)
    return total + conv_macs(N, M, 1, 1, len(sizes) * d_o, d_o)


def head_bytes(N, M, d, d_a, d_o):
    # input, q, k, v, output, plus scores, biased logits and coefficients
    fields_ = N * M * (d + 2 * d_a + 2 * d_o)
    return BYTES * (fields_ + 3 * score_elements(N, M))


def estimate_bytes(operator, N, M, d, d_a, d_o, C, L):
    if operator == "conv2d":
        return BYTES * N * M * (d + 1)
    per_head = head_bytes(N, M, d, d_a, d_o)
    if operator == "sa2d":
        return per_head
    # heads run one at a time; per-head outputs and fused features stay live
    return per_head + BYTES * N * M * d_o * (C + 2) * L


def _median_ns(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def kernel_ratio(N, M, n, m, d, rng, repeats=3):
    x = rng.normal(size=(N, M, d))
    h = rng.normal(size=(n, m, d))
    naive = _median_ns(lambda: conv2d(x, h, kernel="naive"), repeats)
    patch = _median_ns(lambda: conv2d(x, h, kernel="patch"), repeats)
    return naive / max(patch, 1)


def bench_one(operator, N, M, n=1, m=1, L=1, C=1, d=4, d_a=4, d_o=4, repeats=3, seed=0,
              mem_cap=1 << 30, ratio=True):
    if operator not in OPERATORS:
        raise ValueError(f"unknown operator {operator!r}; choose from {OPERATORS}")
    rng = np.random.default_rng(seed)
    n, m = min(n, N), min(m, M)
    sizes = [(n, m)]
    if operator == "msac":
        # scales 1x1, 2x2, ..., LxL clipped to the signal
        sizes = [(min(k, N), min(k, M)) for k in range(1, L + 1)]
        n, m = sizes[-1]
    if operator == "conv2d":
        L = C = 1
        d_a = d_o = 0
        macs = conv_macs(N, M, n, m, d)
    elif operator == "sa2d":
        L = C = 1
        macs = head_macs(N, M, n, m, d, d_a, d_o)
    elif operator == "sac":
        L = 1
        macs = sac_macs(N, M, n, m, d, d_a, d_o, C)
    else:
        macs = msac_macs(N, M, sizes, d, d_a, d_o, C)
    peak = estimate_bytes(operator, N, M, d, d_a, d_o, C, L)
    base = dict(operator=operator, N=N, M=M, n=n, m=m, L=L, C=C, d=d, d_a=d_a, d_o=d_o,
                macs=macs, peak_bytes=peak, score_elements=0 if operator == "conv2d" else score_elements(N, M))
    if peak > mem_cap:
        return BenchRecord(wall_ns=0, naive_over_patch=float("nan"),
                           note=f"skipped: {peak} bytes exceeds cap {mem_cap}", **base)

    x = rng.normal(size=(N, M, d))
    if operator == "conv2d":
        h = rng.normal(size=(n, m, d))
        fn = lambda: conv2d(x, h)  # noqa: E731
    elif operator == "sa2d":
        p = init_attention(rng, d, d_a, d_o, n, m, bias_extent=(N, M))
        fn = lambda: sa2d(x, p)  # noqa: E731
    elif operator == "sac":
        p = init_sac(rng, d, d_a, d_o, C, n, m, parallel_conv=True, bias_extent=(N, M))
        fn = lambda: sac(x, p)  # noqa: E731
    else:
        cfg = MSACConfig(d=d, d_a=d_a, d_o=d_o, heads=C, scales=sizes, parallel_conv=True, bias=True,
                         seed=seed, bias_extent=[N, M])
        p = init_msac(cfg)
        fn = lambda: msac(x, p)  # noqa: E731
    fn()  # warm-up
    wall = _median_ns(fn, repeats)
    r = kernel_ratio(N, M, n, m, d, rng) if ratio else float("nan")
    return BenchRecord(wall_ns=wall, naive_over_patch=r, **base)


def parse_grid(text):
    """``"4x4,8x8"`` -> ``[(4, 4), (8, 8)]``; a bare ``"8"`` means 8x8."""
    grid = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        parts = item.split("x")
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise ValueError(f"bad grid entry {item!r}")
        N, M = int(parts[0]), int(parts[1])
        if N < 1 or M < 1:
            raise ValueError(f"grid sizes must be positive: {item!r}")
        grid.append((N, M))
    if not grid:
        raise ValueError("grid is empty")
    return grid


def run_grid(operator, grid, **kwargs):
    return [bench_one(operator, N, M, **kwargs) for N, M in grid]


def write_csv(records, fh):
    names = [f.name for f in fields(BenchRecord)]
    writer = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(asdict(rec))


def loglog_slope(xs, ys):
    """Least-squares slope of log(ys) against log(xs)."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
