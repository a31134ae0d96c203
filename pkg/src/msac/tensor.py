"""Dense tensors and the convolution primitives everything else is built on.

Tensors are float64 numpy arrays in row-major order. Images are laid out
``[N, M, d]`` (rows, columns, channels) and filter banks ``[F_1, ..., F_L, n, m, d]``.

Convolution follows the "same size, zero padded, no kernel flip" rule:
output pixel ``(i, j)`` reads input rows ``i - pad_top(n) .. i - pad_top(n) + n - 1``
with ``pad_top(n) = ceil(n / 2) - 1``, so even filter sizes lean right
(a 1x2 filter at column j reads columns j and j+1).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Node, defvjp, primitive, reshape, transpose
from .errors import ShapeError


def as_tensor(x):
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.ndim == 0 or 0 in t.shape:
        raise ShapeError(f"tensor dimensions must be positive, got shape {t.shape}")
    return t


def pad_before(size):
    return (size + 1) // 2 - 1


def _check_conv_shapes(x, h):
    if np.ndim(x) != 3:
        raise ShapeError(f"signal must be [N, M, d], got shape {np.shape(x)}")
    if np.ndim(h) < 3:
        raise ShapeError(f"filter must end in (n, m, d), got shape {np.shape(h)}")
    N, M, d = np.shape(x)
    n, m, dh = np.shape(h)[-3:]
    if dh != d:
        raise ShapeError(f"channel mismatch: signal has {d}, filter has {dh}")
    if n > N or m > M:
        raise ShapeError(f"filter {n}x{m} larger than signal {N}x{M}")


def extract_patches(x, n, m):
    """Zero-padded n x m neighbourhoods of every pixel, shape ``[N, M, n, m, d]``."""
    top, left = pad_before(n), pad_before(m)
    padded = np.pad(x, ((top, n - 1 - top), (left, m - 1 - left), (0, 0)))
    windows = sliding_window_view(padded, (n, m), axis=(0, 1))
    return np.moveaxis(windows, 2, 4)


def fold_patches(dpatches, N, M):
    """Adjoint of :func:`extract_patches`: scatter-add patch gradients back to pixels."""
    n, m, d = dpatches.shape[2:]
    top, left = pad_before(n), pad_before(m)
    padded = np.zeros((N + n - 1, M + m - 1, d))
    for k in range(n):
        for l in range(m):
            padded[k:k + N, l:l + M] += dpatches[:, :, k, l, :]
    return padded[top:top + N, left:left + M]


def conv2d_naive(x, h):
    """Single-filter convolution as a literal double sum over the filter footprint."""
    _check_conv_shapes(x, h)
    N, M, _ = x.shape
    n, m, _ = h.shape
    top, left = pad_before(n), pad_before(m)
    out = np.zeros((N, M))
    for i in range(N):
        for j in range(M):
            acc = 0.0
            for k in range(n):
                a = i - top + k
                if a < 0 or a >= N:
                    continue
                for l in range(m):
                    b = j - left + l
                    if 0 <= b < M:
                        acc += float(np.dot(x[a, b], h[k, l]))
            out[i, j] = acc
    return out


def _conv_bank_naive(x, H):
    lead = H.shape[:-3]
    flat = H.reshape((-1,) + H.shape[-3:])
    out = np.stack([conv2d_naive(x, f) for f in flat], axis=-1)
    return out.reshape(x.shape[:2] + lead)


def _conv_bank_patch(x, H):
    n, m = H.shape[-3:-1]
    patches = extract_patches(x, n, m)
    lead = H.shape[:-3]
    flat = H.reshape(-1, int(np.prod(H.shape[-3:])))
    out = patches.reshape(x.shape[0], x.shape[1], -1) @ flat.T
    return out.reshape(x.shape[:2] + lead)


KERNELS = {"naive": _conv_bank_naive, "patch": _conv_bank_patch}


@primitive
def conv_bank(x, H, kernel="patch"):
    """Apply every filter in ``H`` to ``x``; output shape ``[N, M, F_1, ..., F_L]``.

    ``kernel`` selects the literal loop ("naive") or the patch-matrix product
    ("patch"); both compute the same sums.
    """
    _check_conv_shapes(x, H)
    try:
        impl = KERNELS[kernel]
    except KeyError:
        raise ValueError(f"unknown kernel {kernel!r}") from None
    return impl(np.asarray(x, dtype=np.float64), np.asarray(H, dtype=np.float64))


def _conv_bank_vjp(g, out, x, H, kernel="patch"):
    N, M, d = x.shape
    n, m = H.shape[-3:-1]
    lead = H.shape[:-3]
    F = int(np.prod(lead, dtype=np.int64))
    patches = extract_patches(x, n, m).reshape(N * M, n * m * d)
    g2 = g.reshape(N * M, F)
    dH = (g2.T @ patches).reshape(H.shape)
    dpatches = (g2 @ H.reshape(F, n * m * d)).reshape(N, M, n, m, d)
    return fold_patches(dpatches, N, M), dH


defvjp(conv_bank, _conv_bank_vjp)


def conv2d(x, h, kernel="patch"):
    """Convolve ``x`` [N, M, d] with one filter ``h`` [n, m, d]; returns [N, M]."""
    if np.ndim(h) != 3:
        raise ShapeError(f"conv2d filter must be [n, m, d], got shape {np.shape(h)}")
    return conv_bank(x, h, kernel=kernel)


def matmul_via_conv(W, X):
    """Compute ``W @ X`` as a bank of 1x1 convolutions over a 1 x n signal."""
    if np.ndim(W) != 2 or np.ndim(X) != 2:
        raise ShapeError("matmul_via_conv expects two matrices")
    d_out, d = W.shape
    d_x, n = X.shape
    if d != d_x:
        raise ShapeError(f"inner dimensions differ: {d} vs {d_x}")
    x = reshape(transpose(X), (1, n, d))
    H = reshape(W, (d_out, 1, 1, d))
    c = conv_bank(x, H)
    return transpose(reshape(c, (n, d_out)))


def _normalize_axes(axes, ndim):
    axes = list(axes)
    if not axes:
        raise ValueError("softmax needs at least one axis")
    norm = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank {ndim}")
        norm.append(a % ndim)
    if len(set(norm)) != len(norm):
        raise ValueError(f"repeated axes in {axes}")
    return tuple(norm)


@primitive
def softmax_over_axes(t, axes):
    """Joint softmax over ``axes`` for every setting of the remaining axes."""
    axes = _normalize_axes(axes, np.ndim(t))
    shifted = t - np.max(t, axis=axes, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axes, keepdims=True)


def _softmax_vjp(g, out, t, axes):
    axes = _normalize_axes(axes, np.ndim(t))
    return (out * (g - np.sum(g * out, axis=axes, keepdims=True)), None)


defvjp(softmax_over_axes, _softmax_vjp)


@primitive
def _concat(*ts):
    return np.concatenate(ts, axis=-1)


def _concat_vjp(g, out, *ts):
    bounds = np.cumsum([t.shape[-1] for t in ts])[:-1]
    return tuple(np.split(g, bounds, axis=-1))


defvjp(_concat, _concat_vjp)


def concat_last_axis(ts):
    ts = list(ts)
    if not ts:
        raise ShapeError("nothing to concatenate")
    lead = np.shape(ts[0])[:-1]
    for t in ts[1:]:
        if np.shape(t)[:-1] != lead:
            raise ShapeError(f"leading shapes differ: {lead} vs {np.shape(t)[:-1]}")
    if len(ts) == 1:
        return ts[0]
    return _concat(*ts)


def is_node(x):
    return isinstance(x, Node)
