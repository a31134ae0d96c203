"""Self attentive convolutions (SAC) and their multiscale fusion (MSAC)."""

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .attention import AttentionParams, MultiHeadParams, multi_head_sa2d
from .errors import ShapeError
from .tensor import concat_last_axis, conv_bank


@dataclass
class SACParams:
    mh: MultiHeadParams
    hr: Optional[np.ndarray] = None  # [d_o, n, m, d] parallel regular convolution
    hy_fuse: Optional[np.ndarray] = None  # [d_o, 1, 1, 2 * d_o]

    def __post_init__(self):
        head = self.mh.heads[0]
        if (self.hr is None) != (self.hy_fuse is None):
            raise ShapeError("hr and hy_fuse must be given together")
        if self.hr is not None:
            want = (head.d_o,) + head.filter_size + (head.d,)
            if np.shape(self.hr) != want:
                raise ShapeError(f"hr must be {want}, got {np.shape(self.hr)}")
            if np.shape(self.hy_fuse) != (head.d_o, 1, 1, 2 * head.d_o):
                raise ShapeError(f"hy_fuse must be {(head.d_o, 1, 1, 2 * head.d_o)}, got {np.shape(self.hy_fuse)}")

    @property
    def filter_size(self):
        return self.mh.heads[0].filter_size

    @property
    def d(self):
        return self.mh.heads[0].d

    @property
    def d_o(self):
        return self.mh.d_o


@dataclass
class MSACParams:
    scales: list
    hphi: np.ndarray  # [d_o, 1, 1, d_o * L]

    def __post_init__(self):
        if not self.scales:
            raise ShapeError("at least one scale is required")
        first = self.scales[0].mh.heads[0]
        for s in self.scales:
            h = s.mh.heads[0]
            if (h.d, h.d_a, h.d_o) != (first.d, first.d_a, first.d_o):
                raise ShapeError("all scales must share d, d_a and d_o")
        want = (first.d_o, 1, 1, first.d_o * len(self.scales))
        if np.shape(self.hphi) != want:
            raise ShapeError(f"hphi must be {want}, got {np.shape(self.hphi)}")

    @property
    def d(self):
        return self.scales[0].d

    @property
    def d_o(self):
        return self.scales[0].d_o


@dataclass
class MSACConfig:
    d: int
    d_a: int
    d_o: int
    heads: int = 1
    scales: List[List[int]] = field(default_factory=lambda: [[1, 1]])
    parallel_conv: bool = False
    bias: bool = False
    seed: int = 0
    bias_extent: List[int] = field(default_factory=lambda: [16, 16])

    def __post_init__(self):
        for name in ("d", "d_a", "d_o", "heads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.scales:
            raise ValueError("scales must be non-empty")
        self.scales = [[int(n), int(m)] for n, m in self.scales]
        if any(n < 1 or m < 1 for n, m in self.scales):
            raise ValueError("filter sizes must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


def uniform_filters(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    s = fan_in ** -0.5
    return rng.uniform(-s, s, size=shape)


def basis_bank(d_out, d_in, offset=0):
    """1x1 bank whose filter f selects input channel ``offset + f``."""
    bank = np.zeros((d_out, 1, 1, d_in))
    bank[np.arange(d_out), 0, 0, offset + np.arange(d_out)] = 1.0
    return bank


def averaging_bank(d_o, copies):
    """1x1 bank averaging ``copies`` stacked groups of d_o channels."""
    return np.concatenate([basis_bank(d_o, d_o)] * copies, axis=-1) / copies


def init_attention(rng, d, d_a, d_o, n=1, m=1, bias_extent=None):
    return AttentionParams(
        hq=uniform_filters(rng, (d_a, n, m, d)),
        hk=uniform_filters(rng, (d_a, n, m, d)),
        hv=uniform_filters(rng, (d_o, n, m, d)),
        bias=None if bias_extent is None else np.zeros(tuple(bias_extent)),
    )


def init_multi_head(rng, d, d_a, d_o, heads, n=1, m=1, bias_extent=None):
    hs = [init_attention(rng, d, d_a, d_o, n, m, bias_extent) for _ in range(heads)]
    return MultiHeadParams(hs, uniform_filters(rng, (d_o, 1, 1, heads * d_o)))


def init_sac(rng, d, d_a, d_o, heads=1, n=1, m=1, parallel_conv=False, bias_extent=None):
    mh = init_multi_head(rng, d, d_a, d_o, heads, n, m, bias_extent)
    if not parallel_conv:
        return SACParams(mh)
    return SACParams(
        mh,
        hr=uniform_filters(rng, (d_o, n, m, d)),
        hy_fuse=uniform_filters(rng, (d_o, 1, 1, 2 * d_o)),
    )


def init_msac(config: MSACConfig, rng=None):
    """Seeded MSAC parameters; relative biases start at zero."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    extent = config.bias_extent if config.bias else None
    scales = [
        init_sac(rng, config.d, config.d_a, config.d_o, config.heads, n, m, config.parallel_conv, extent)
        for n, m in config.scales
    ]
    hphi = uniform_filters(rng, (config.d_o, 1, 1, config.d_o * len(scales)))
    return MSACParams(scales, hphi)


def _check_fits(x, n, m):
    if np.ndim(x) != 3:
        raise ShapeError(f"expected [N, M, d] input, got shape {np.shape(x)}")
    if n > x.shape[0] or m > x.shape[1]:
        raise ShapeError(f"{n}x{m} filters exceed the {x.shape[0]}x{x.shape[1]} signal")


def sac(x, p: SACParams):
    n, m = p.filter_size
    _check_fits(x, n, m)
    y = multi_head_sa2d(x, p.mh)
    if p.hr is None:
        return y
    y_conv = conv_bank(x, p.hr)
    return conv_bank(concat_last_axis([y, y_conv]), p.hy_fuse)


def msac_features(x, p: MSACParams):
    """The per-scale outputs stacked on the channel axis, before reduction."""
    return concat_last_axis([sac(x, s) for s in p.scales])


def msac(x, p: MSACParams):
    return conv_bank(msac_features(x, p), p.hphi)


def msac_1d(x, p: MSACParams):
    """MSAC over a sentence-shaped input ``[1, M, d]``; every scale must be 1 x m."""
    if np.ndim(x) != 3 or x.shape[0] != 1:
        raise ShapeError(f"sentence input must be [1, M, d], got shape {np.shape(x)}")
    for s in p.scales:
        n, _ = s.filter_size
        if n != 1:
            raise ShapeError(f"language mode needs 1 x m scales, got {s.filter_size}")
    return msac(x, p)
