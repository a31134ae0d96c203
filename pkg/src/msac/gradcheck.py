"""Randomized comparison of reverse-mode gradients against central differences.

Each registered op builds a random instance ``(fn, inputs)``; the scalar under
test is ``sum(fn(inputs) * R)`` for a fixed random weighting ``R`` so that
normalization does not zero every gradient.
"""

import numpy as np

from .applications import (
    SegmentAugmentation,
    SimilarityModel,
    ToyLMModel,
    apply_segment_augmentation,
    concat_images,
    lm_forward,
    similarity_logit,
)
from .attention import (
    AttentionParams,
    MultiHeadParams,
    multi_head_sa2d,
    sa2d,
    sa2d_apply,
    sa2d_coefficients,
    sa2d_project,
    sa2d_scores,
    self_attention_1d,
)
from .autodiff import GradReport, backward, finite_diff_grad, sigmoid, sum_all, value_of
from .params import flatten, to_nodes, tree_map
from .sac import MSACParams, SACParams, msac, msac_1d, sac, uniform_filters
from .tensor import concat_last_axis, conv2d, conv_bank, matmul_via_conv, softmax_over_axes

REL_FLOOR = 1e-8
REGISTRY = {}


def register(name):
    def deco(builder):
        REGISTRY[name] = builder
        return builder

    return deco


def _dims(rng, lo=1, hi=4):
    return int(rng.integers(lo, hi + 1))


def _head(rng, d, d_a, d_o, n, m, N, M, bias=True):
    return AttentionParams(
        hq=uniform_filters(rng, (d_a, n, m, d)),
        hk=uniform_filters(rng, (d_a, n, m, d)),
        hv=uniform_filters(rng, (d_o, n, m, d)),
        bias=rng.normal(size=(N, M)) if bias else None,
    )


@register("conv2d")
def _conv2d(rng):
    N, M, d = _dims(rng), _dims(rng), _dims(rng)
    n, m = _dims(rng, 1, min(N, 3)), _dims(rng, 1, min(M, 3))
    return (lambda t: conv2d(t[0], t[1])), [rng.normal(size=(N, M, d)), rng.normal(size=(n, m, d))]


@register("conv_bank")
def _conv_bank(rng):
    N, M, d, F = _dims(rng), _dims(rng), _dims(rng), _dims(rng)
    n, m = _dims(rng, 1, min(N, 3)), _dims(rng, 1, min(M, 3))
    return (lambda t: conv_bank(t[0], t[1])), [rng.normal(size=(N, M, d)), rng.normal(size=(F, 2, n, m, d))]


@register("matmul_via_conv")
def _matmul(rng):
    a, b, c = _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: matmul_via_conv(t[0], t[1])), [rng.normal(size=(a, b)), rng.normal(size=(b, c))]


@register("softmax_over_axes")
def _softmax(rng):
    shape = tuple(_dims(rng, 1, 3) for _ in range(4))
    axes = [0, 1] if rng.random() < 0.5 else [1, 3]
    return (lambda t: softmax_over_axes(t[0], axes)), [rng.normal(size=shape)]


@register("concat_last_axis")
def _concat(rng):
    N, M = _dims(rng), _dims(rng)
    ts = [rng.normal(size=(N, M, _dims(rng))) for _ in range(3)]
    return (lambda t: concat_last_axis(t)), ts


@register("self_attention_1d")
def _sa1d(rng):
    d, n, d_a, d_o = _dims(rng), _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: self_attention_1d(*t)), [
        rng.normal(size=(d, n)), rng.normal(size=(d_a, d)), rng.normal(size=(d_a, d)), rng.normal(size=(d_o, d)),
    ]


@register("sa2d_project")
def _project(rng):
    N, M, d, d_a, d_o = (_dims(rng) for _ in range(5))
    n, m = _dims(rng, 1, min(N, 3)), _dims(rng, 1, min(M, 3))
    p = _head(rng, d, d_a, d_o, n, m, N, M, bias=False)

    def fn(t):
        q, k, v = sa2d_project(t[0], t[1])
        return concat_last_axis([q, k, v])

    return fn, [rng.normal(size=(N, M, d)), p]


@register("sa2d_scores")
def _scores(rng):
    N, M, d_a = _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: sa2d_scores(t[0], t[1])), [rng.normal(size=(N, M, d_a)), rng.normal(size=(N, M, d_a))]


@register("sa2d_coefficients")
def _coefficients(rng):
    N, M, d_a = _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: sa2d_coefficients(t[0], d_a, t[1])), [
        rng.normal(size=(N, M, N, M)), rng.normal(size=(N + 1, M)),
    ]


@register("sa2d_apply")
def _apply(rng):
    N, M, d_o = _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: sa2d_apply(t[0], t[1])), [rng.normal(size=(N, M, N, M)), rng.normal(size=(N, M, d_o))]


@register("sa2d")
def _sa2d(rng):
    N, M, d, d_a, d_o = (_dims(rng) for _ in range(5))
    p = _head(rng, d, d_a, d_o, 1, 1, N, M)
    return (lambda t: sa2d(t[0], t[1])), [rng.normal(size=(N, M, d)), p]


@register("multi_head_sa2d")
def _mh(rng):
    N, M, d, d_a, d_o = (_dims(rng, 1, 3) for _ in range(5))
    C = _dims(rng, 1, 3)
    heads = [_head(rng, d, d_a, d_o, 1, 1, N, M) for _ in range(C)]
    p = MultiHeadParams(heads, rng.normal(size=(d_o, 1, 1, C * d_o)))
    return (lambda t: multi_head_sa2d(t[0], t[1])), [rng.normal(size=(N, M, d)), p]


def _random_sac(rng, N, M, d, d_a, d_o, n, m, C):
    heads = [_head(rng, d, d_a, d_o, n, m, N, M) for _ in range(C)]
    mh = MultiHeadParams(heads, uniform_filters(rng, (d_o, 1, 1, C * d_o)))
    return SACParams(mh, uniform_filters(rng, (d_o, n, m, d)), uniform_filters(rng, (d_o, 1, 1, 2 * d_o)))


@register("sac")
def _sac(rng):
    N, M = _dims(rng, 2, 4), _dims(rng, 2, 4)
    d, d_a, d_o, C = _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 2)
    p = _random_sac(rng, N, M, d, d_a, d_o, _dims(rng, 1, min(N, 3)), _dims(rng, 1, min(M, 3)), C)
    return (lambda t: sac(t[0], t[1])), [rng.normal(size=(N, M, d)), p]


def _random_msac(rng, N, M, d, d_a, d_o, sizes, C=1):
    scales = [_random_sac(rng, N, M, d, d_a, d_o, n, m, C) for n, m in sizes]
    return MSACParams(scales, rng.normal(size=(d_o, 1, 1, d_o * len(sizes))))


@register("msac")
def _msac(rng):
    N, M = _dims(rng, 2, 4), _dims(rng, 2, 4)
    d, d_a, d_o = _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 3)
    sizes = [(1, 1), (min(2, N), min(2, M))]
    p = _random_msac(rng, N, M, d, d_a, d_o, sizes)
    return (lambda t: msac(t[0], t[1])), [rng.normal(size=(N, M, d)), p]


@register("msac_1d")
def _msac_1d(rng):
    M = _dims(rng, 3, 4)
    d, d_a, d_o = _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 3)
    p = _random_msac(rng, 1, M, d, d_a, d_o, [(1, 1), (1, 2), (1, 3)])
    return (lambda t: msac_1d(t[0], t[1])), [rng.normal(size=(1, M, d)), p]


@register("concat_images")
def _concat_images(rng):
    N, M, d = _dims(rng), _dims(rng), _dims(rng)
    return (lambda t: concat_images(t[0], t[1])), [rng.normal(size=(N, M, d)), rng.normal(size=(N, M, d))]


@register("segment_augmentation")
def _segments(rng):
    N, M, d = _dims(rng), _dims(rng), _dims(rng)
    mode = "additive" if rng.random() < 0.5 else "channel"
    d_seg = d if mode == "additive" else _dims(rng, 1, 2)
    aug = SegmentAugmentation(mode, rng.normal(size=(N, M, d_seg)), rng.normal(size=(N, M, d_seg)))

    def fn(t):
        x, z = apply_segment_augmentation(t[0], t[1], t[2])
        return concat_last_axis([x, z])

    return fn, [rng.normal(size=(N, M, d)), rng.normal(size=(N, M, d)), aug]


@register("lm_forward")
def _lm(rng):
    vocab, L = _dims(rng, 2, 4), _dims(rng, 3, 4)
    d, d_a, d_o = _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 1, 3)
    stack = [_random_msac(rng, 1, L, d, d_a, d_o, [(1, 1), (1, 2)])]
    model = ToyLMModel(rng.normal(size=(vocab, d)), stack, rng.normal(size=(vocab, d_o)))
    tokens = rng.integers(0, vocab, size=L)
    return (lambda t: lm_forward(tokens, t[0])), [model]


@register("similarity_score")
def _similarity(rng):
    N, M, d = _dims(rng, 1, 2), _dims(rng, 1, 2), _dims(rng, 1, 2)
    d_a, d_o = _dims(rng, 1, 3), _dims(rng, 1, 3)
    mode = "additive" if rng.random() < 0.5 else "channel"
    d_seg = d if mode == "additive" else 1
    aug = SegmentAugmentation(mode, rng.normal(size=(N, M, d_seg)), rng.normal(size=(N, M, d_seg)))
    d_in = d if mode == "additive" else d + 1
    stack = [_random_msac(rng, N, 2 * M, d_in, d_a, d_o, [(1, 1), (1, 2)])]
    model = SimilarityModel(aug, stack, rng.normal(size=d_o), rng.normal(size=1))
    return (lambda t: sigmoid(similarity_logit(t[0], t[1], t[2]))), [
        rng.normal(size=(N, M, d)), rng.normal(size=(N, M, d)), model,
    ]


def _replace(tree, target, value):
    return tree_map(lambda path, leaf: value if path == target else leaf, tree)


def compare(analytic, numeric, floor=REL_FLOOR):
    """``(max_abs_error, max_rel_error)`` with the relative denominator floored."""
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(diff.max(initial=0.0)), float((diff / denom).max(initial=0.0))


def check_instance(fn, inputs, rng, eps=1e-4):
    """Gradient errors for one random instance, over every input leaf."""
    weights = rng.normal(size=np.shape(value_of(fn(inputs))))

    def scalar(tree):
        return float(np.sum(value_of(fn(tree)) * weights))

    nodes = to_nodes(inputs)
    backward(sum_all(fn(nodes) * weights))
    max_abs = max_rel = 0.0
    probes = 0
    for (path, leaf), (_, node) in zip(flatten(inputs), flatten(nodes)):
        numeric = finite_diff_grad(lambda v: scalar(_replace(inputs, path, v)), leaf, eps)
        analytic = np.zeros_like(leaf) if node.grad is None else node.grad
        a, r = compare(analytic, numeric)
        max_abs, max_rel = max(max_abs, a), max(max_rel, r)
        probes += leaf.size
    return max_abs, max_rel, probes


def grad_check(op_name, trial_count=5, seed=0, eps=1e-4):
    try:
        builder = REGISTRY[op_name]
    except KeyError:
        raise KeyError(f"unregistered op {op_name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    rng = np.random.default_rng(seed)
    max_abs = max_rel = 0.0
    probes = 0
    for _ in range(trial_count):
        fn, inputs = builder(rng)
        a, r, p = check_instance(fn, inputs, rng, eps)
        max_abs, max_rel = max(max_abs, a), max(max_rel, r)
        probes += p
    return GradReport(op_name, max_abs, max_rel, probes)
