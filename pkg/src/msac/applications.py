"""Two demo pipelines assembled from MSAC: cross-attentive image similarity
and a bidirectional character model.

The similarity head (global average pool, affine, logistic) and both
training objectives are plumbing for the demos, not part of the operators.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .autodiff import (
    Node,
    backward,
    defvjp,
    log_softmax,
    mean_axes,
    primitive,
    reshape,
    sigmoid,
    softplus,
    sum_all,
    take_rows,
    transpose,
    value_of,
)
from .errors import DivergenceError, ShapeError
from .params import to_nodes, to_values, tree_map
from .sac import MSACConfig, init_msac, msac, msac_1d
from .tensor import concat_last_axis, matmul_via_conv

SEGMENT_MODES = ("additive", "channel")


@dataclass
class SegmentAugmentation:
    mode: str
    x_seg: np.ndarray
    z_seg: np.ndarray

    def __post_init__(self):
        if self.mode not in SEGMENT_MODES:
            raise ValueError(f"segment mode must be one of {SEGMENT_MODES}, got {self.mode!r}")
        if np.shape(self.x_seg) != np.shape(self.z_seg):
            raise ShapeError("x_seg and z_seg must share shape")
        if np.ndim(self.x_seg) != 3:
            raise ShapeError("segment tensors must be [N, M, channels]")


@dataclass
class SimilarityModel:
    augmentation: Optional[SegmentAugmentation]
    stack: list
    w: np.ndarray  # [d_o]
    c: np.ndarray  # [1]

    def __post_init__(self):
        if not self.stack:
            raise ShapeError("similarity model needs at least one MSAC layer")
        for lower, upper in zip(self.stack, self.stack[1:]):
            if lower.d_o != upper.d:
                raise ShapeError("MSAC layers do not chain")
        if np.shape(self.w) != (self.stack[-1].d_o,):
            raise ShapeError(f"score weights must have size {self.stack[-1].d_o}")


@dataclass
class ToyLMModel:
    embedding: np.ndarray  # [vocab, d]
    stack: list
    proj: np.ndarray  # [vocab, d_o]

    def __post_init__(self):
        vocab = np.shape(self.embedding)[0]
        if vocab < 2:
            raise ShapeError("vocabulary needs at least two symbols")
        for layer in self.stack:
            if any(s.filter_size[0] != 1 for s in layer.scales):
                raise ShapeError("language model scales must be 1 x m")
        for lower, upper in zip(self.stack, self.stack[1:]):
            if lower.d_o != upper.d:
                raise ShapeError("MSAC layers do not chain")
        if np.shape(self.proj) != (vocab, self.stack[-1].d_o):
            raise ShapeError(f"projection must be {(vocab, self.stack[-1].d_o)}, got {np.shape(self.proj)}")

    @property
    def vocab(self):
        return np.shape(self.embedding)[0]


@primitive
def concat_columns(x, z):
    return np.concatenate([x, z], axis=1)


def _concat_columns_vjp(g, out, x, z):
    return g[:, : x.shape[1]], g[:, x.shape[1]:]


defvjp(concat_columns, _concat_columns_vjp)


def concat_images(x, z):
    """Place ``z`` to the right of ``x``: ``[N, M, d] x 2 -> [N, 2M, d]``."""
    if np.ndim(x) != 3 or np.shape(x) != np.shape(z):
        raise ShapeError(f"images must share an [N, M, d] shape, got {np.shape(x)} and {np.shape(z)}")
    return concat_columns(x, z)


def apply_segment_augmentation(x, z, aug: SegmentAugmentation):
    if aug.mode == "additive":
        if np.shape(aug.x_seg) != np.shape(x) or np.shape(aug.z_seg) != np.shape(z):
            raise ShapeError("additive segments must match the image shape")
        return x + aug.x_seg, z + aug.z_seg
    if np.shape(aug.x_seg)[:2] != np.shape(x)[:2] or np.shape(aug.z_seg)[:2] != np.shape(z)[:2]:
        raise ShapeError("channel segments must match the image's spatial extent")
    return concat_last_axis([x, aug.x_seg]), concat_last_axis([z, aug.z_seg])


def _check_finite(t, what):
    if not np.all(np.isfinite(value_of(t))):
        raise FloatingPointError(f"non-finite values in {what}")


def similarity_logit(x, z, model: SimilarityModel):
    if model.augmentation is not None:
        x, z = apply_segment_augmentation(x, z, model.augmentation)
    h = concat_images(x, z)
    for layer in model.stack:
        h = msac(h, layer)
        _check_finite(h, "MSAC activations")
    pooled = mean_axes(h, (0, 1))
    return sum_all(pooled * model.w) + model.c


def similarity_score(x, z, model: SimilarityModel):
    """Probability in (0, 1) that ``x`` and ``z`` form a matching pair."""
    return float(sigmoid(value_of(similarity_logit(x, z, model)))[0])


def similarity_loss(model, pairs, labels):
    """Mean binary cross-entropy over ``pairs``, computed from logits."""
    total = 0.0
    for (x, z), y in zip(pairs, labels):
        s = similarity_logit(x, z, model)
        total = total + sum_all(softplus(s) - s * float(y))
    return total * (1.0 / len(labels))


def similarity_accuracy(model, pairs, labels):
    hits = [(similarity_score(x, z, model) > 0.5) == bool(y) for (x, z), y in zip(pairs, labels)]
    return float(np.mean(hits))


def lm_forward(tokens, model: ToyLMModel):
    """Per-position log-probabilities ``[len, vocab]``; attention is bidirectional."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError("token sequence must be a non-empty 1D sequence")
    if ids.min() < 0 or ids.max() >= model.vocab:
        raise ValueError(f"token id out of range for vocabulary of {model.vocab}")
    L = ids.size
    h = reshape(take_rows(model.embedding, ids), (1, L, np.shape(model.embedding)[1]))
    for layer in model.stack:
        h = msac_1d(h, layer)
        _check_finite(h, "MSAC activations")
    y = reshape(h, (L, model.stack[-1].d_o))
    logits = transpose(matmul_via_conv(model.proj, transpose(y)))
    return log_softmax(logits, axis=-1)


def lm_loss(model, inputs, targets):
    """Mean per-token cross-entropy in nats."""
    logp = lm_forward(inputs, model)
    onehot = np.zeros(np.shape(logp))
    onehot[np.arange(len(targets)), np.asarray(targets)] = 1.0
    return sum_all(logp * onehot) * (-1.0 / len(targets))


def train(params, loss_fn, lr, steps, callback=None):
    """Plain gradient descent. Returns ``(params, losses)``.

    ``loss_fn`` maps a parameter record whose leaves are Nodes to a scalar
    Node. ``callback(step, params, loss)`` may return True to stop early.
    A non-finite loss raises :class:`DivergenceError` carrying the curve so far.
    """
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    if steps < 1:
        raise ValueError("steps must be positive")
    params = to_values(params)
    losses = []
    for step in range(steps):
        nodes = to_nodes(params)
        loss = loss_fn(nodes)
        value = float(loss.value)
        if not np.isfinite(value):
            raise DivergenceError(step, losses)
        losses.append(value)
        backward(loss)
        params = tree_map(lambda path, n: n.value - lr * n.grad, nodes)
        if callback is not None and callback(step, params, value):
            break
    return params, losses


# Demo setups


@dataclass
class LMConfig:
    text: str = "hello world!"
    d: int = 8
    d_a: int = 4
    d_o: int = 8
    heads: int = 1
    scales: List[List[int]] = field(default_factory=lambda: [[1, 1], [1, 2], [1, 3]])
    parallel_conv: bool = True
    bias: bool = True
    layers: int = 1
    lr: float = 0.5
    steps: int = 2000
    target_loss: float = 0.1
    seed: int = 0

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass
class SimilarityConfig:
    pairs: int = 16
    N: int = 3
    M: int = 3
    d: int = 2
    noise: float = 0.1
    d_a: int = 4
    d_o: int = 8
    heads: int = 1
    scales: List[List[int]] = field(default_factory=lambda: [[1, 1], [2, 2]])
    parallel_conv: bool = True
    bias: bool = True
    layers: int = 1
    augmentation: Optional[str] = "channel"
    d_seg: int = 1
    lr: float = 0.5
    steps: int = 3000
    seed: int = 0

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def char_vocab(text):
    return sorted(set(text))


def build_lm(cfg: LMConfig):
    rng = np.random.default_rng(cfg.seed)
    vocab = char_vocab(cfg.text)
    embedding = rng.normal(0.0, 1.0, size=(len(vocab), cfg.d))
    stack = []
    d_in = cfg.d
    for _ in range(cfg.layers):
        mcfg = MSACConfig(
            d=d_in, d_a=cfg.d_a, d_o=cfg.d_o, heads=cfg.heads, scales=cfg.scales,
            parallel_conv=cfg.parallel_conv, bias=cfg.bias, bias_extent=[1, len(cfg.text)],
        )
        stack.append(init_msac(mcfg, rng))
        d_in = cfg.d_o
    proj = rng.uniform(-cfg.d_o ** -0.5, cfg.d_o ** -0.5, size=(len(vocab), cfg.d_o))
    return ToyLMModel(embedding, stack, proj), vocab


def lm_task(cfg: LMConfig):
    """Inputs are the text minus its last character, targets the next characters."""
    vocab = char_vocab(cfg.text)
    index = {ch: i for i, ch in enumerate(vocab)}
    ids = [index[ch] for ch in cfg.text]
    return ids[:-1], ids[1:]


def train_lm(cfg: LMConfig, callback=None):
    model, _ = build_lm(cfg)
    inputs, targets = lm_task(cfg)

    def stop(step, params, loss):
        if callback is not None:
            callback(step, params, loss)
        return loss < cfg.target_loss

    return train(model, lambda m: lm_loss(m, inputs, targets), cfg.lr, cfg.steps, stop)


def similarity_dataset(pairs, N, M, d, noise, rng):
    """Alternating same/different pairs; same pairs are two noisy copies of one base."""
    data, labels = [], []
    for k in range(pairs):
        same = k % 2 == 0
        base = rng.normal(size=(N, M, d))
        other = base if same else rng.normal(size=(N, M, d))
        x = base + noise * rng.normal(size=(N, M, d))
        z = other + noise * rng.normal(size=(N, M, d))
        data.append((x, z))
        labels.append(1 if same else 0)
    return data, labels


def build_similarity(cfg: SimilarityConfig, rng):
    aug = None
    d_in = cfg.d
    if cfg.augmentation == "additive":
        shape = (cfg.N, cfg.M, cfg.d)
        aug = SegmentAugmentation("additive", rng.normal(0, 0.1, shape), rng.normal(0, 0.1, shape))
    elif cfg.augmentation == "channel":
        shape = (cfg.N, cfg.M, cfg.d_seg)
        aug = SegmentAugmentation("channel", np.zeros(shape), np.ones(shape))
        d_in = cfg.d + cfg.d_seg
    elif cfg.augmentation is not None:
        raise ValueError(f"unknown augmentation {cfg.augmentation!r}")
    stack = []
    for _ in range(cfg.layers):
        mcfg = MSACConfig(
            d=d_in, d_a=cfg.d_a, d_o=cfg.d_o, heads=cfg.heads, scales=cfg.scales,
            parallel_conv=cfg.parallel_conv, bias=cfg.bias, bias_extent=[cfg.N, 2 * cfg.M],
        )
        stack.append(init_msac(mcfg, rng))
        d_in = cfg.d_o
    w = rng.uniform(-cfg.d_o ** -0.5, cfg.d_o ** -0.5, size=cfg.d_o)
    return SimilarityModel(aug, stack, w, np.zeros(1))


def train_similarity(cfg: SimilarityConfig, callback=None, check_every=25):
    rng = np.random.default_rng(cfg.seed)
    pairs, labels = similarity_dataset(cfg.pairs, cfg.N, cfg.M, cfg.d, cfg.noise, rng)
    model = build_similarity(cfg, rng)

    def stop(step, params, loss):
        if callback is not None:
            callback(step, params, loss)
        return (step + 1) % check_every == 0 and similarity_accuracy(params, pairs, labels) == 1.0

    model, losses = train(model, lambda m: similarity_loss(m, pairs, labels), cfg.lr, cfg.steps, stop)
    return model, losses, (pairs, labels)
