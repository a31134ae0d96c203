"""Randomized equivalence suites: the operator family's reduction chain."""

import numpy as np

from .attention import AttentionParams, MultiHeadParams, sa2d, self_attention_1d
from .sac import MSACParams, SACParams, basis_bank, init_attention, msac, sac
from .tensor import matmul_via_conv

TOLERANCES = {"matmul-conv": 0.0, "sa2d-1d": 1e-12, "sac-sa2d": 1e-12, "msac-sac": 1e-12}
SUITES = tuple(TOLERANCES)


def relative_deviation(actual, expected):
    actual, expected = np.asarray(actual), np.asarray(expected)
    scale = max(float(np.max(np.abs(expected))), 1e-300)
    return float(np.max(np.abs(actual - expected))) / scale


def loop_matmul(W, X):
    """Triple-loop product, independent of every library kernel."""
    rows, inner = W.shape
    cols = X.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += W[i, k] * X[k, j]
            out[i, j] = acc
    return out


def _matmul_conv_trial(rng):
    d_out, d, n = (int(rng.integers(1, 9)) for _ in range(3))
    W = rng.integers(-9, 10, size=(d_out, d)).astype(float)
    X = rng.integers(-9, 10, size=(d, n)).astype(float)
    return float(np.max(np.abs(matmul_via_conv(W, X) - loop_matmul(W, X))))


def _sa2d_1d_trial(rng):
    M, d, d_a, d_o = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    wq, wk = rng.normal(size=(d_a, d)), rng.normal(size=(d_a, d))
    wv = rng.normal(size=(d_o, d))
    X = rng.normal(size=(d, M))
    p = AttentionParams(wq.reshape(d_a, 1, 1, d), wk.reshape(d_a, 1, 1, d), wv.reshape(d_o, 1, 1, d))
    y2d = sa2d(X.T.reshape(1, M, d), p)
    y1d = self_attention_1d(X, wq, wk, wv)
    return relative_deviation(y2d[0].T, y1d)


def _random_head(rng, N, M):
    d, d_a, d_o = (int(rng.integers(1, 5)) for _ in range(3))
    use_bias = rng.random() < 0.5
    p = init_attention(rng, d, d_a, d_o, bias_extent=(N, M) if use_bias else None)
    if use_bias:
        p.bias = rng.normal(size=(N, M))
    return p


def _sac_sa2d_trial(rng):
    N, M = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    head = _random_head(rng, N, M)
    x = rng.normal(size=(N, M, head.d))
    s = SACParams(MultiHeadParams([head], basis_bank(head.d_o, head.d_o)))
    return relative_deviation(sac(x, s), sa2d(x, head))


def _msac_sac_trial(rng):
    N, M = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    d, d_a, d_o = (int(rng.integers(1, 5)) for _ in range(3))
    n, m = int(rng.integers(1, min(N, 3) + 1)), int(rng.integers(1, min(M, 3) + 1))
    heads = [init_attention(rng, d, d_a, d_o, n, m, bias_extent=(N, M)) for _ in range(2)]
    for h in heads:
        h.bias = rng.normal(size=(N, M))
    s = SACParams(MultiHeadParams(heads, rng.normal(size=(d_o, 1, 1, 2 * d_o))))
    x = rng.normal(size=(N, M, d))
    return relative_deviation(msac(x, MSACParams([s], basis_bank(d_o, d_o))), sac(x, s))


_TRIALS = {
    "matmul-conv": _matmul_conv_trial,
    "sa2d-1d": _sa2d_1d_trial,
    "sac-sa2d": _sac_sa2d_trial,
    "msac-sac": _msac_sac_trial,
}


def run_suite(name, trials=100, seed=0):
    if name not in _TRIALS:
        raise KeyError(f"unknown suite {name!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    worst = max(_TRIALS[name](rng) for _ in range(trials))
    tol = TOLERANCES[name]
    return {"suite": name, "trials": trials, "max_deviation": worst, "tolerance": tol, "passed": worst <= tol}
