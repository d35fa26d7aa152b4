"""Pooling head: multi-layer feature collection, global/local branches,
locality module (WaveBlock / inverted residual / dilated pyramid), fusion
alternatives, and the final projection head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderOutputs
from .kernels import conv2d, fc, gap
from .position import unfold_grid

FUSION_METHODS = (
    "none_without_elm",
    "none_with_elm",
    "sum",
    "hadamard",
    "concat",
    "fast_normalized",
    "orthogonal",
)

# fusion methods whose output has 2D channels; the local FC widens to match
WIDE_FUSIONS = ("concat", "orthogonal")

PROJ_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class MultiLayerFeatures:
    f_c: np.ndarray  # (k, D)
    f_p: np.ndarray  # (k, h, w, D)

    @property
    def k(self) -> int:
        return self.f_c.shape[0]


@dataclass(frozen=True)
class ElmConfig:
    dilation_rates: tuple[int, ...] = (6, 12, 18)
    expansion: int = 4
    wb_blocks: int = 3
    wb_scale: float = 0.5
    mode: str = "infer"

    def __post_init__(self):
        if list(self.dilation_rates) != sorted(set(self.dilation_rates)):
            raise ValueError("dilation rates must be strictly increasing")
        if any(r < 1 for r in self.dilation_rates):
            raise ValueError("dilation rates must be positive")
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")
        if self.wb_blocks < 1:
            raise ValueError("wb_blocks must be >= 1")
        if not 0.0 < self.wb_scale <= 1.0:
            raise ValueError("wb_scale must lie in (0, 1]")
        if self.mode not in ("train", "infer"):
            raise ValueError(f"mode must be train or infer, got {self.mode!r}")


@dataclass(frozen=True)
class FusionConfig:
    method: str = "orthogonal"
    v1: float = 1.0
    v2: float = 1.0
    eps: float = 1e-4

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}")
        if self.method == "fast_normalized" and self.eps <= 0:
            raise ValueError("fast_normalized requires eps > 0")


@dataclass(frozen=True)
class IrbWeights:
    expand_w: np.ndarray  # (1,1,D,D')
    expand_b: np.ndarray
    depthwise_w: np.ndarray  # (3,3,1,D')
    depthwise_b: np.ndarray
    squeeze_w: np.ndarray  # (1,1,D',D)
    squeeze_b: np.ndarray


@dataclass(frozen=True)
class AsppWeights:
    branch_w: list[np.ndarray]  # (3,3,D,D) per dilation rate
    branch_b: list[np.ndarray]
    reduce_w: np.ndarray  # (1,1,nD,D)
    reduce_b: np.ndarray


@dataclass(frozen=True)
class HeadWeights:
    global_w: np.ndarray | None  # (k*D, N)
    global_b: np.ndarray | None
    reduce_w: np.ndarray | None  # (1,1,k*D,D)
    reduce_b: np.ndarray | None
    irb: IrbWeights | None
    aspp: AsppWeights | None
    local_w: np.ndarray | None  # (D or 2D, N)
    local_b: np.ndarray | None
    out_w: np.ndarray  # (2N or N, N)
    out_b: np.ndarray
    bn_mean: np.ndarray = field(default=None)
    bn_var: np.ndarray = field(default=None)
    bn_gamma: np.ndarray = field(default=None)
    bn_beta: np.ndarray = field(default=None)


def collect_multilayer(outputs: EncoderOutputs, k: int) -> MultiLayerFeatures:
    """Stack [CLS] rows and folded patch maps of the last k layers, in order."""
    num_layers = len(outputs.layers) - 1
    if not 1 <= k <= num_layers:
        raise ValueError(f"k={k} out of range 1..{num_layers}")
    taps = outputs.layers[num_layers - k + 1 :]
    f_c = np.stack([z[0] for z in taps])
    f_p = np.stack([unfold_grid(z[1:], outputs.w, outputs.h) for z in taps])
    return MultiLayerFeatures(f_c=f_c, f_p=f_p)


def global_branch(f_c: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return fc(f_c.reshape(-1), weights, bias)


def reduce_channels(f_p: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """1x1 conv reducing the channel-concatenated k*D stack to D channels."""
    k, h, w, d = f_p.shape
    stacked = f_p.transpose(1, 2, 0, 3).reshape(h, w, k * d)
    return conv2d(stacked, weights, bias)


def waveblock(y: np.ndarray, cfg: ElmConfig, rng: np.random.Generator) -> np.ndarray:
    """Train-time row-block augmentation; strict identity at inference.

    Rows (first spatial axis) are split into wb_blocks contiguous blocks; one
    block, drawn uniformly, is kept as-is while all other rows are scaled.
    """
    if cfg.mode == "infer":
        return y
    h = y.shape[0]
    if cfg.wb_blocks > h:
        raise ValueError(f"wb_blocks={cfg.wb_blocks} exceeds map height {h}")
    if cfg.wb_blocks == 1:
        return y
    edges = np.linspace(0, h, cfg.wb_blocks + 1).astype(int)
    keep = int(rng.integers(cfg.wb_blocks))
    out = y * np.float32(cfg.wb_scale)
    out[edges[keep] : edges[keep + 1]] = y[edges[keep] : edges[keep + 1]]
    return out


def irb(y: np.ndarray, w: IrbWeights) -> np.ndarray:
    """Inverted residual: 1x1 expand -> ReLU -> 3x3 depthwise -> ReLU -> 1x1
    squeeze, with the input added back (channel counts match)."""
    d_prime = w.expand_w.shape[3]
    x = conv2d(y, w.expand_w, w.expand_b)
    x = np.maximum(x, 0.0).astype(np.float32)
    x = conv2d(x, w.depthwise_w, w.depthwise_b, groups=d_prime)
    x = np.maximum(x, 0.0).astype(np.float32)
    x = conv2d(x, w.squeeze_w, w.squeeze_b)
    return (y.astype(np.float64) + x.astype(np.float64)).astype(np.float32)


def aspp(y: np.ndarray, w: AsppWeights, cfg: ElmConfig) -> np.ndarray:
    """Parallel 3x3 convolutions at each dilation rate, concatenated and
    reduced back to D channels by a 1x1 convolution."""
    if len(w.branch_w) != len(cfg.dilation_rates):
        raise ValueError("one conv branch per dilation rate required")
    branches = [
        conv2d(y, bw, bb, dilation=r)
        for bw, bb, r in zip(w.branch_w, w.branch_b, cfg.dilation_rates)
    ]
    cat = np.concatenate(branches, axis=2)
    return conv2d(cat, w.reduce_w, w.reduce_b)


def elm(
    y: np.ndarray, weights: HeadWeights, cfg: ElmConfig, rng: np.random.Generator
) -> np.ndarray:
    out = waveblock(y, cfg, rng)
    out = irb(out, weights.irb)
    out = waveblock(out, cfg, rng)
    return aspp(out, weights.aspp, cfg)


def fuse(y: np.ndarray, u: np.ndarray, cfg: FusionConfig) -> np.ndarray:
    """Combine the locality module's input and output feature maps.

    concat and orthogonal double the channel count; the local-branch FC
    widens accordingly.
    """
    if cfg.method == "none_without_elm":
        return y
    if cfg.method == "none_with_elm":
        return u
    if y.shape != u.shape:
        raise ValueError(f"fuse shape mismatch: {y.shape} vs {u.shape}")
    if cfg.method == "sum":
        return (y.astype(np.float64) + u.astype(np.float64)).astype(np.float32)
    if cfg.method == "hadamard":
        return (y.astype(np.float64) * u.astype(np.float64)).astype(np.float32)
    if cfg.method == "concat":
        return np.concatenate([y, u], axis=2)
    if cfg.method == "fast_normalized":
        w1 = max(cfg.v1, 0.0)
        w2 = max(cfg.v2, 0.0)
        denom = w1 + w2 + cfg.eps
        if denom == 0:
            raise ValueError("fast_normalized weights and eps are all zero")
        out = (w1 * y.astype(np.float64) + w2 * u.astype(np.float64)) / denom
        return out.astype(np.float32)
    # orthogonal: per position, Gram-Schmidt residual of y against u, then u
    y64 = y.astype(np.float64)
    u64 = u.astype(np.float64)
    dots = np.sum(y64 * u64, axis=2, keepdims=True)
    norms = np.sum(u64 * u64, axis=2, keepdims=True)
    coef = np.where(norms < PROJ_DENOM_FLOOR, 0.0, dots / np.maximum(norms, PROJ_DENOM_FLOOR))
    resid = y64 - coef * u64
    return np.concatenate([resid, u64], axis=2).astype(np.float32)


def local_branch(y_fused: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return fc(gap(y_fused), weights, bias)


def output_head(
    u_c: np.ndarray | None,
    u_p: np.ndarray | None,
    weights: HeadWeights,
    mode: str = "infer",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Concatenate branch outputs and project to the N-dim descriptor.

    Train mode applies dropout then FC then batchnorm; inference is FC only
    (dropout is identity and the batchnorm is skipped entirely). Single-branch
    ablations pass None for the missing branch; the FC narrows to N inputs.
    """
    parts = [p for p in (u_c, u_p) if p is not None]
    if not parts:
        raise ValueError("at least one branch output required")
    x = np.concatenate(parts)
    if mode == "infer":
        return fc(x, weights.out_w, weights.out_b)
    if mode != "train":
        raise ValueError(f"mode must be train or infer, got {mode!r}")
    if dropout > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout requires an rng")
        mask = (rng.random(x.shape) >= dropout).astype(np.float32)
        x = x * mask / np.float32(1.0 - dropout)
    out = fc(x, weights.out_w, weights.out_b)
    from .kernels import batchnorm_inference

    return batchnorm_inference(
        out, weights.bn_mean, weights.bn_var, weights.bn_gamma, weights.bn_beta
    )


def local_fc_width(dim: int, fusion_method: str) -> int:
    return 2 * dim if fusion_method in WIDE_FUSIONS else dim


def init_head(
    dim: int,
    k: int,
    out_dim: int,
    fusion_method: str,
    elm_cfg: ElmConfig,
    rng: np.random.Generator,
    use_global: bool = True,
    use_local: bool = True,
    use_elm: bool = True,
    init_std: float = 0.02,
) -> HeadWeights:
    def g(*shape):
        return (rng.standard_normal(shape) * init_std).astype(np.float32)

    def zeros(n):
        return np.zeros(n, dtype=np.float32)

    d_prime = dim * elm_cfg.expansion
    n_rates = len(elm_cfg.dilation_rates)
    global_w = g(k * dim, out_dim) if use_global else None
    global_b = zeros(out_dim) if use_global else None
    reduce_w = g(1, 1, k * dim, dim) if use_local else None
    reduce_b = zeros(dim) if use_local else None
    irb_w = None
    aspp_w = None
    local_w = None
    local_b = None
    if use_local:
        if use_elm:
            irb_w = IrbWeights(
                expand_w=g(1, 1, dim, d_prime), expand_b=zeros(d_prime),
                depthwise_w=g(3, 3, 1, d_prime), depthwise_b=zeros(d_prime),
                squeeze_w=g(1, 1, d_prime, dim), squeeze_b=zeros(dim),
            )
            aspp_w = AsppWeights(
                branch_w=[g(3, 3, dim, dim) for _ in range(n_rates)],
                branch_b=[zeros(dim) for _ in range(n_rates)],
                reduce_w=g(1, 1, n_rates * dim, dim), reduce_b=zeros(dim),
            )
            width = local_fc_width(dim, fusion_method)
        else:
            width = dim
        local_w = g(width, out_dim)
        local_b = zeros(out_dim)
    in_width = out_dim * (2 if use_global and use_local else 1)
    return HeadWeights(
        global_w=global_w, global_b=global_b,
        reduce_w=reduce_w, reduce_b=reduce_b,
        irb=irb_w, aspp=aspp_w,
        local_w=local_w, local_b=local_b,
        out_w=g(in_width, out_dim), out_b=zeros(out_dim),
        bn_mean=zeros(out_dim), bn_var=np.ones(out_dim, dtype=np.float32),
        bn_gamma=np.ones(out_dim, dtype=np.float32), bn_beta=zeros(out_dim),
    )
