"""Self attention in 1D and 2D, single and multi-headed.

Score and coefficient tensors are indexed ``[r, t, i, j]``: position ``(i, j)``
is the query, ``(r, t)`` the attended key. Softmax normalizes over ``(r, t)``
so every output pixel is a convex combination of value pixels.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import defvjp, primitive, reshape, transpose
from .errors import ShapeError
from .tensor import concat_last_axis, conv_bank, matmul_via_conv, softmax_over_axes


@dataclass
class AttentionParams:
    hq: np.ndarray  # [d_a, n, m, d]
    hk: np.ndarray  # [d_a, n, m, d]
    hv: np.ndarray  # [d_o, n, m, d]
    bias: Optional[np.ndarray] = None  # [N_max, M_max], indexed by |di|, |dj|

    def __post_init__(self):
        if np.ndim(self.hq) != 4 or np.ndim(self.hk) != 4 or np.ndim(self.hv) != 4:
            raise ShapeError("query/key/value banks must be [F, n, m, d]")
        if np.shape(self.hq) != np.shape(self.hk):
            raise ShapeError(f"query bank {np.shape(self.hq)} != key bank {np.shape(self.hk)}")
        if np.shape(self.hv)[1:] != np.shape(self.hq)[1:]:
            raise ShapeError("value bank must share (n, m, d) with query/key banks")
        if self.bias is not None and np.ndim(self.bias) != 2:
            raise ShapeError("relative bias must be a matrix")

    @property
    def d_a(self):
        return np.shape(self.hq)[0]

    @property
    def d_o(self):
        return np.shape(self.hv)[0]

    @property
    def filter_size(self):
        return tuple(np.shape(self.hq)[1:3])

    @property
    def d(self):
        return np.shape(self.hq)[3]


@dataclass
class MultiHeadParams:
    heads: list
    hy: Optional[np.ndarray] = None  # [d_o, 1, 1, C * d_o]; may be None only when C == 1

    def __post_init__(self):
        if not self.heads:
            raise ShapeError("at least one head is required")
        first = self.heads[0]
        sig = (first.d_a, first.d_o, first.filter_size, first.d)
        for h in self.heads[1:]:
            if (h.d_a, h.d_o, h.filter_size, h.d) != sig:
                raise ShapeError("all heads must share d_a, d_o, filter size and d")
        if self.hy is None:
            if len(self.heads) != 1:
                raise ShapeError("a reduction bank hy is required for more than one head")
        elif np.shape(self.hy) != (first.d_o, 1, 1, len(self.heads) * first.d_o):
            raise ShapeError(
                f"hy must be {(first.d_o, 1, 1, len(self.heads) * first.d_o)}, got {np.shape(self.hy)}"
            )

    @property
    def d_o(self):
        return self.heads[0].d_o


def self_attention_1d(X, wq, wk, wv):
    """Token self attention on columns of ``X`` [d, n]; returns [d_o, n].

    Every product, projections included, runs as a bank of 1x1 convolutions.
    Scores are laid out keys-by-queries so the column-wise softmax normalizes
    over keys and each output column is a convex combination of value columns.
    """
    if np.ndim(X) != 2:
        raise ShapeError("X must be a [d, n] matrix")
    d = X.shape[0]
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv)):
        if np.ndim(w) != 2 or w.shape[1] != d:
            raise ShapeError(f"{name} must have {d} columns, got shape {np.shape(w)}")
    if wq.shape != wk.shape:
        raise ShapeError("wq and wk must share shape")
    d_a = wq.shape[0]
    Q = matmul_via_conv(wq, X)
    K = matmul_via_conv(wk, X)
    V = matmul_via_conv(wv, X)
    scores = matmul_via_conv(transpose(K), Q)  # [keys, queries]
    A_T = softmax_over_axes(scores * (1.0 / np.sqrt(d_a)), [0])
    return matmul_via_conv(V, A_T)


def sa2d_project(x, p: AttentionParams):
    if np.ndim(x) != 3 or x.shape[2] != p.d:
        raise ShapeError(f"expected [N, M, {p.d}] input, got shape {np.shape(x)}")
    return conv_bank(x, p.hq), conv_bank(x, p.hk), conv_bank(x, p.hv)


def sa2d_scores(q, k):
    """Unnormalized scores ``alpha[r, t, i, j] = <k[r, t], q[i, j]>``.

    Each query pixel is reshaped into a 1x1 filter and the key field is
    convolved with the resulting bank.
    """
    if np.ndim(q) != 3 or np.shape(q) != np.shape(k):
        raise ShapeError(f"query {np.shape(q)} and key {np.shape(k)} fields must match")
    N, M, d_a = q.shape
    return conv_bank(k, reshape(q, (N, M, 1, 1, d_a)))


def _offset_index(N, M):
    r = np.arange(N)
    t = np.arange(M)
    di = np.abs(r[:, None, None, None] - r[None, None, :, None])
    dj = np.abs(t[None, :, None, None] - t[None, None, None, :])
    return np.broadcast_arrays(di, dj)


@primitive
def relative_bias_field(bias, N, M):
    """Expand a bias matrix to ``B[r, t, i, j] = bias[|i - r|, |j - t|]``."""
    if bias.shape[0] < N or bias.shape[1] < M:
        raise ShapeError(f"bias {bias.shape} does not cover a {N}x{M} field")
    di, dj = _offset_index(N, M)
    return bias[di, dj]


def _bias_vjp(g, out, bias, N, M):
    di, dj = _offset_index(N, M)
    grad = np.zeros_like(bias)
    np.add.at(grad, (di, dj), g)
    return grad, None, None


defvjp(relative_bias_field, _bias_vjp)


def sa2d_coefficients(alpha, d_a, bias=None):
    if np.ndim(alpha) != 4 or np.shape(alpha)[:2] != np.shape(alpha)[2:]:
        raise ShapeError(f"scores must be [N, M, N, M], got shape {np.shape(alpha)}")
    N, M = alpha.shape[:2]
    logits = alpha * (1.0 / np.sqrt(d_a))
    if bias is not None:
        logits = logits + relative_bias_field(bias, N, M)
    return softmax_over_axes(logits, [0, 1])


@primitive
def sa2d_apply(a, v):
    """``y[i, j] = sum_{r,t} a[r, t, i, j] * v[r, t]``."""
    if np.ndim(a) != 4 or np.ndim(v) != 3 or a.shape[:2] != v.shape[:2] or a.shape[2:] != v.shape[:2]:
        raise ShapeError(f"coefficients {np.shape(a)} incompatible with values {np.shape(v)}")
    N, M = v.shape[:2]
    return (a.reshape(N * M, N * M).T @ v.reshape(N * M, -1)).reshape(N, M, -1)


def _apply_vjp(g, out, a, v):
    N, M, d_o = v.shape
    A = a.reshape(N * M, N * M)
    G = g.reshape(N * M, d_o)
    V = v.reshape(N * M, d_o)
    return (V @ G.T).reshape(a.shape), (A @ G).reshape(v.shape)


defvjp(sa2d_apply, _apply_vjp)


def sa2d_attention(x, p: AttentionParams):
    """Return ``(coefficients, values)`` of one head, for inspection and tests."""
    q, k, v = sa2d_project(x, p)
    a = sa2d_coefficients(sa2d_scores(q, k), p.d_a, p.bias)
    return a, v


def sa2d(x, p: AttentionParams):
    a, v = sa2d_attention(x, p)
    return sa2d_apply(a, v)


def multi_head_sa2d(x, p: MultiHeadParams):
    outs = [sa2d(x, head) for head in p.heads]
    if p.hy is None:
        return outs[0]
    return conv_bank(concat_last_axis(outs), p.hy)
