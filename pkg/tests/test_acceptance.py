"""Acceptance checks. Each test prints one PASS/FAIL line, visible even without ``-s``.

Run with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from msac.applications import (
    LMConfig,
    SimilarityConfig,
    build_lm,
    build_similarity,
    lm_forward,
    lm_task,
    similarity_accuracy,
    train_lm,
    train_similarity,
)
from msac.attention import AttentionParams, MultiHeadParams, sa2d, sa2d_attention, self_attention_1d
from msac.bench import bench_one, loglog_slope, score_elements
from msac.gradcheck import REGISTRY, grad_check
from msac.io import decode_mst1, encode_mst1, load_params, save_params
from msac.params import flatten
from msac.sac import MSACConfig, MSACParams, SACParams, basis_bank, init_attention, init_msac, msac, sac
from msac.tensor import conv2d, conv_bank, matmul_via_conv
from oracles import conv2d_loop, conv_bank_loop, matmul_loop, sa2d_reference


@pytest.fixture
def report(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")
        assert passed, detail

    return emit


def rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-300))


def test_1_matmul_as_convolution(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        d_out, d, n = (int(v) for v in rng.integers(1, 9, size=3))
        W = rng.integers(-9, 10, size=(d_out, d)).astype(float)
        X = rng.integers(-9, 10, size=(d, n)).astype(float)
        worst = max(worst, float(np.max(np.abs(matmul_via_conv(W, X) - matmul_loop(W, X)))))
    elapsed = time.perf_counter() - t0
    report(1, "matmul_via_conv equals dense matmul", worst == 0.0 and elapsed < 1.0,
           f"max deviation {worst}, {elapsed:.3f} s for 100 instances")


def test_2_convolution_oracles(report):
    rng = np.random.default_rng(1)
    worst_oracle = worst_kernel = 0.0
    for _ in range(100):
        N, M = (int(v) for v in rng.integers(1, 6, size=2))
        n, m = int(rng.integers(1, min(N, 3) + 1)), int(rng.integers(1, min(M, 3) + 1))
        d = int(rng.integers(1, 5))
        x = rng.normal(size=(N, M, d))
        h = rng.normal(size=(n, m, d))
        H = rng.normal(size=(int(rng.integers(1, 4)), 2, n, m, d))
        worst_oracle = max(worst_oracle, rel(conv2d(x, h), conv2d_loop(x, h)),
                           rel(conv_bank(x, H), conv_bank_loop(x, H)))
        naive = conv_bank(x, H, kernel="naive")
        worst_kernel = max(worst_kernel, rel(conv_bank(x, H, kernel="patch"), naive),
                           rel(conv2d(x, h, kernel="patch"), conv2d(x, h, kernel="naive")))
    report(2, "conv2d/conv_bank match loop oracles; patch kernel matches naive",
           worst_oracle <= 1e-12 and worst_kernel <= 1e-10,
           f"oracle {worst_oracle:.2e} <= 1e-12, kernels {worst_kernel:.2e} <= 1e-10")


def _reduction_a(rng):
    M, d, d_a, d_o = int(rng.integers(1, 9)), *(int(v) for v in rng.integers(1, 5, size=3))
    wq, wk, wv = rng.normal(size=(d_a, d)), rng.normal(size=(d_a, d)), rng.normal(size=(d_o, d))
    X = rng.normal(size=(d, M))
    p = AttentionParams(wq.reshape(d_a, 1, 1, d), wk.reshape(d_a, 1, 1, d), wv.reshape(d_o, 1, 1, d))
    return rel(sa2d(X.T.reshape(1, M, d), p)[0].T, self_attention_1d(X, wq, wk, wv))


def _random_head(rng, N, M, n=1, m=1):
    d, d_a, d_o = (int(v) for v in rng.integers(1, 5, size=3))
    head = init_attention(rng, d, d_a, d_o, n, m, bias_extent=(N, M))
    head.bias = rng.normal(size=(N, M)) if rng.random() < 0.5 else None
    return head


def _reduction_b(rng):
    N, M = (int(v) for v in rng.integers(1, 6, size=2))
    head = _random_head(rng, N, M)
    x = rng.normal(size=(N, M, head.d))
    s = SACParams(MultiHeadParams([head], basis_bank(head.d_o, head.d_o)))
    return max(rel(sac(x, s), sa2d(x, head)), rel(sac(x, s), sa2d_reference(x, head.hq, head.hk, head.hv, head.bias)))


def _reduction_c(rng):
    N, M = (int(v) for v in rng.integers(1, 6, size=2))
    n, m = int(rng.integers(1, min(N, 3) + 1)), int(rng.integers(1, min(M, 3) + 1))
    heads = [_random_head(rng, N, M, n, m)]
    d, d_o = heads[0].d, heads[0].d_o
    heads.append(init_attention(rng, d, heads[0].d_a, d_o, n, m))
    s = SACParams(MultiHeadParams(heads, rng.normal(size=(d_o, 1, 1, 2 * d_o))))
    x = rng.normal(size=(N, M, d))
    return rel(msac(x, MSACParams([s], basis_bank(d_o, d_o))), sac(x, s))


def test_3_reduction_chain(report):
    rng = np.random.default_rng(2)
    worst = {name: max(fn(rng) for _ in range(100))
             for name, fn in (("a", _reduction_a), ("b", _reduction_b), ("c", _reduction_c))}
    report(3, "sa2d -> 1D attention, SAC -> sa2d, MSAC -> SAC", max(worst.values()) <= 1e-12,
           ", ".join(f"({k}) {v:.2e}" for k, v in worst.items()) + " <= 1e-12")


def _check_slices(a, worst):
    # coefficients are indexed [keys..., queries...]; each query slice is one distribution
    key_axes = tuple(range(a.ndim // 2))
    worst[0] = max(worst[0], float(np.max(np.abs(a.sum(axis=key_axes) - 1.0))))
    worst[1] = min(worst[1], float(a.min()))


def test_4_attention_normalization(report):
    rng = np.random.default_rng(3)
    worst = [0.0, np.inf]  # max |sum - 1|, min coefficient
    for _ in range(50):
        # 1D: with X = I and wv = I the output is the coefficient matrix itself
        n, d_a = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        wq, wk = 2 * rng.normal(size=(2, d_a, n))
        _check_slices(self_attention_1d(np.eye(n), wq, wk, np.eye(n)), worst)

        N, M = (int(v) for v in rng.integers(1, 6, size=2))
        cfg = MSACConfig(d=int(rng.integers(1, 4)), d_a=d_a, d_o=2, heads=int(rng.integers(1, 4)),
                         scales=[[1, 1], [min(2, N), min(3, M)]], parallel_conv=True, bias=True,
                         seed=int(rng.integers(2**31)), bias_extent=[N, M])
        p = init_msac(cfg)
        x = 3 * rng.normal(size=(N, M, cfg.d))
        for s in p.scales:
            for head in s.mh.heads:
                head.bias = 3 * rng.normal(size=(N, M))
                _check_slices(sa2d_attention(x, head)[0], worst)
    passed = worst[0] <= 1e-12 and worst[1] > 0
    report(4, "attention slices sum to one and are positive", passed,
           f"max |sum - 1| {worst[0]:.2e} <= 1e-12, min coefficient {worst[1]:.2e} > 0")


def test_5_gradient_suite(report):
    t0 = time.perf_counter()
    reports = [grad_check(op, trial_count=3, seed=0, eps=1e-4) for op in sorted(REGISTRY)]
    elapsed = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_rel_error)
    required = {"msac", "msac_1d", "lm_forward", "similarity_score"}
    passed = all(r.passed(1e-4) for r in reports) and elapsed < 60 and required <= set(REGISTRY)
    report(5, f"reverse mode matches central differences on {len(reports)} ops", passed,
           f"worst {worst.op} {worst.max_rel_error:.2e} < 1e-4, {elapsed:.1f} s < 60 s")


def _curve_bytes(losses):
    return np.asarray(losses, dtype=np.float64).tobytes()


def test_6a_language_model_overfits(report):
    cfg = LMConfig()
    model, losses = train_lm(cfg)
    inputs, targets = lm_task(cfg)
    final = float(-np.mean(lm_forward(inputs, model)[np.arange(len(targets)), targets]))
    _, again = train_lm(LMConfig())
    passed = len(cfg.text) == 12 and final < 0.1 and len(losses) <= 2000 and _curve_bytes(losses) == _curve_bytes(again)
    report("6a", "toy LM overfits 12 characters, reproducibly", passed,
           f"loss {final:.4f} < 0.1 after {len(losses)} steps, rerun identical: {_curve_bytes(losses) == _curve_bytes(again)}")


def test_6b_similarity_model_separates_pairs(report):
    cfg = SimilarityConfig()
    model, losses, (pairs, labels) = train_similarity(cfg)
    acc = similarity_accuracy(model, pairs, labels)
    model2, again, _ = train_similarity(SimilarityConfig())
    same = _curve_bytes(losses) == _curve_bytes(again) and all(
        a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(flatten(model), flatten(model2)))
    passed = len(pairs) == 16 and acc == 1.0 and len(losses) <= 3000 and same
    report("6b", "similarity model reaches training accuracy 1.0, reproducibly", passed,
           f"accuracy {acc} on {len(pairs)} pairs after {len(losses)} steps, rerun identical: {same}")


def test_7_scaling(report):
    grid = [(8, 8), (16, 16), (24, 24), (32, 32)]
    analytic = all(score_elements(2 * N, 2 * M) == 16 * score_elements(N, M) for N, M in grid) and all(
        bench_one("sa2d", N, M, repeats=1, mem_cap=0).score_elements == (N * M) ** 2 for N, M in grid)
    recs = [bench_one("sa2d", N, M, d=4, d_a=4, d_o=4, repeats=5, seed=0, ratio=False) for N, M in grid]
    sizes = [r.N * r.M for r in recs]
    times = [r.wall_ns for r in recs]
    slope = loglog_slope(sizes, times)
    growth = times[1] and times[3] / times[1]
    conv_exact = all(
        bench_one("conv2d", N, M, n=n, m=m, d=d, repeats=1, ratio=False).macs == N * M * n * m * d
        for N, M in grid for n, m in [(1, 1), (3, 3), (2, 5)] for d in (1, 3)
    )
    passed = analytic and slope > 1.0 and growth > 4 and conv_exact
    report(7, "score tensor grows as (NM)^2, sa2d time superlinear, conv MACs exact", passed,
           f"slope {slope:.2f} > 1, t(32x32)/t(16x16) {growth:.1f} > 4, analytic {analytic}, MACs {conv_exact}")


def test_8_serialization(tmp_path, report):
    rng = np.random.default_rng(8)
    tensors = [rng.normal(size=s) for s in [(1,), (7,), (3, 4), (2, 3, 4), (2, 1, 3, 2), (2, 2, 1, 2, 3)]]
    special = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 5e-324, np.finfo(float).max, np.pi])
    tensors.append(special)
    tensor_ok = all(
        decode_mst1(encode_mst1(t)).shape == t.shape and decode_mst1(encode_mst1(t)).tobytes() == t.tobytes()
        for t in tensors
    )
    trees = {
        "msac": init_msac(MSACConfig(d=3, d_a=2, d_o=4, heads=2, scales=[[1, 1], [2, 3]], parallel_conv=True,
                                     bias=True, seed=1)),
        "msac-plain": init_msac(MSACConfig(d=2, d_a=2, d_o=2)),
        "lm": build_lm(LMConfig(layers=2))[0],
    }
    for mode in ("additive", "channel", None):
        trees[f"similarity-{mode}"] = build_similarity(SimilarityConfig(augmentation=mode), np.random.default_rng(0))
    tree_ok = True
    for name, tree in trees.items():
        save_params(tmp_path / name, tree)
        back, orig = flatten(load_params(tmp_path / name)), flatten(tree)
        tree_ok &= [p for p, _ in back] == [p for p, _ in orig] and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(back, orig))
    report(8, "MST1 round trip is bitwise", tensor_ok and tree_ok,
           f"{len(tensors)} tensors ok: {tensor_ok}, {len(trees)} parameter sets ok: {tree_ok}")
