"""Hybrid vision-transformer encoder with per-layer output taps.

Tokenization is either a raw patch projection or a small convolutional stem
(stride-2 3x3 conv + ReLU blocks reaching the configured downsampling ratio).
Transformer blocks are pre-norm: LN -> MSA -> residual, LN -> MLP (4x, GELU)
-> residual. Every layer output and every attention matrix is retained so
downstream pooling and analysis can tap arbitrary layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import conv2d
from .position import PositionEmbedding, fold_grid, resample_positions


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (M+1, D), row 0 = [CLS]
    w: int
    h: int

    def __post_init__(self):
        if self.tokens.shape[0] != self.w * self.h + 1:
            raise ValueError(
                f"token count {self.tokens.shape[0]} != w*h+1 = {self.w * self.h + 1}"
            )


@dataclass(frozen=True)
class StemWeights:
    # one (weights, bias) per stride-2 3x3 conv block, ReLU between blocks
    convs: list[tuple[np.ndarray, np.ndarray]]

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.convs)


@dataclass(frozen=True)
class LayerWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray  # (D, D)
    wk: np.ndarray
    wv: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    wo: np.ndarray  # (D, D)
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray  # (D, 4D)
    b1: np.ndarray
    w2: np.ndarray  # (4D, D)
    b2: np.ndarray


@dataclass(frozen=True)
class EncoderWeights:
    dim: int
    heads: int
    layers: list[LayerWeights]
    cls_token: np.ndarray  # (D,)
    pos: PositionEmbedding
    stem: StemWeights | None = None
    patch_proj: np.ndarray | None = None  # (patch*patch*C, D)
    patch_bias: np.ndarray | None = None
    patch: int = 16

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def num_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class EncoderOutputs:
    layers: list[np.ndarray]  # L+1 sequences of (M+1, D)
    attention: list[np.ndarray] = field(default_factory=list)  # L of (H, M+1, M+1)
    w: int = 0
    h: int = 0


def _rows_layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps=1e-6):
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = x64.var(axis=1, keepdims=True)
    return gamma * (x64 - mu) / np.sqrt(var + eps) + beta


def _rows_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def patchify(
    image: np.ndarray, patch: int, projection: np.ndarray, bias: np.ndarray
) -> TokenSequence:
    """Slice a (C, H, W) image into patch tokens, row-major over the grid.

    Each token is the flattened raw patch (C-major, then rows) times the
    projection matrix plus bias. Returned sequence has a zero [CLS] slot at
    row 0 which the caller overwrites with the learned token.
    """
    c, hh, ww = image.shape
    if hh % patch != 0 or ww % patch != 0:
        raise ValueError(f"image {hh}x{ww} not divisible by patch {patch}")
    h, w = hh // patch, ww // patch
    d = projection.shape[1]
    if projection.shape[0] != c * patch * patch:
        raise ValueError(
            f"projection rows {projection.shape[0]} != C*patch^2 = {c * patch * patch}"
        )
    blocks = image.reshape(c, h, patch, w, patch)
    flat = blocks.transpose(1, 3, 0, 2, 4).reshape(h * w, c * patch * patch)
    toks = (flat.astype(np.float64) @ projection.astype(np.float64) + bias).astype(
        np.float32
    )
    out = np.concatenate([np.zeros((1, d), dtype=np.float32), toks], axis=0)
    return TokenSequence(tokens=out, w=w, h=h)


def stem_forward(image: np.ndarray, stem: StemWeights) -> np.ndarray:
    """Run the convolutional stem on a (C, H, W) image -> (h, w, D) map."""
    c, hh, ww = image.shape
    s = stem.downsampling
    if hh % s != 0 or ww % s != 0:
        raise ValueError(f"image {hh}x{ww} not divisible by stem ratio {s}")
    x = image.transpose(1, 2, 0)  # (H, W, C)
    for i, (wts, bias) in enumerate(stem.convs):
        x = conv2d(x, wts, bias, stride=2)
        if i < len(stem.convs) - 1:
            x = np.maximum(x, 0.0).astype(np.float32)
    return x


def tokens_from_feature_map(fmap: np.ndarray, cls_token: np.ndarray) -> TokenSequence:
    h, w, d = fmap.shape
    toks = np.concatenate([cls_token[None, :], fold_grid(fmap)], axis=0)
    return TokenSequence(tokens=toks.astype(np.float32), w=w, h=h)


def tokenize(image: np.ndarray, enc: EncoderWeights) -> TokenSequence:
    """Image -> token sequence with the learned [CLS] at row 0."""
    if enc.stem is not None:
        return tokens_from_feature_map(stem_forward(image, enc.stem), enc.cls_token)
    seq = patchify(image, enc.patch, enc.patch_proj, enc.patch_bias)
    toks = seq.tokens.copy()
    toks[0] = enc.cls_token
    return TokenSequence(tokens=toks, w=seq.w, h=seq.h)


def _msa(x: np.ndarray, lw: LayerWeights, heads: int):
    n, d = x.shape
    dh = d // heads
    q = x @ lw.wq.astype(np.float64) + lw.bq
    k = x @ lw.wk.astype(np.float64) + lw.bk
    v = x @ lw.wv.astype(np.float64) + lw.bv
    attn = np.empty((heads, n, n), dtype=np.float64)
    out = np.empty((n, d), dtype=np.float64)
    scale = 1.0 / np.sqrt(dh)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        a = _rows_softmax(q[:, sl] @ k[:, sl].T * scale)
        attn[hd] = a
        out[:, sl] = a @ v[:, sl]
    return out @ lw.wo.astype(np.float64) + lw.bo, attn


def encode(seq: TokenSequence, pos: np.ndarray, enc: EncoderWeights) -> EncoderOutputs:
    """Run all transformer layers, retaining every output and attention map."""
    if seq.tokens.shape != pos.shape:
        raise ValueError(
            f"token shape {seq.tokens.shape} != position shape {pos.shape}"
        )
    z = (seq.tokens.astype(np.float64) + pos.astype(np.float64)).astype(np.float32)
    layers = [z]
    attention = []
    cur = z.astype(np.float64)
    for lw in enc.layers:
        normed = _rows_layernorm(cur, lw.ln1_gamma, lw.ln1_beta)
        msa_out, attn = _msa(normed, lw, enc.heads)
        cur = cur + msa_out
        normed = _rows_layernorm(cur, lw.ln2_gamma, lw.ln2_beta)
        mlp = _gelu(normed @ lw.w1.astype(np.float64) + lw.b1)
        cur = cur + (mlp @ lw.w2.astype(np.float64) + lw.b2)
        layers.append(cur.astype(np.float32))
        attention.append(attn.astype(np.float32))
        cur = layers[-1].astype(np.float64)
    return EncoderOutputs(layers=layers, attention=attention, w=seq.w, h=seq.h)


def cls_attention_map(outputs: EncoderOutputs, layer: int) -> np.ndarray:
    """Head-averaged [CLS]-query attention over patch tokens, as an (h, w) map.

    The [CLS]->[CLS] weight is excluded, so entries sum to 1 - a_cls_cls.
    """
    if not 1 <= layer <= len(outputs.attention):
        raise ValueError(f"layer {layer} out of range 1..{len(outputs.attention)}")
    a = outputs.attention[layer - 1].astype(np.float64)
    row = a[:, 0, 1:].mean(axis=0)
    return row.reshape(outputs.h, outputs.w).astype(np.float32)


def init_encoder(
    dim: int,
    layers: int,
    heads: int,
    rng: np.random.Generator,
    pos_grid: tuple[int, int] = (24, 24),
    use_stem: bool = True,
    stem_ratio: int = 16,
    patch: int = 16,
    in_channels: int = 3,
    init_std: float = 0.02,
) -> EncoderWeights:
    """Seeded Gaussian initialization (std 0.02) of all encoder weights."""

    def g(*shape):
        return (rng.standard_normal(shape) * init_std).astype(np.float32)

    layer_list = []
    for _ in range(layers):
        layer_list.append(
            LayerWeights(
                ln1_gamma=np.ones(dim, dtype=np.float32),
                ln1_beta=np.zeros(dim, dtype=np.float32),
                wq=g(dim, dim), wk=g(dim, dim), wv=g(dim, dim),
                bq=np.zeros(dim, dtype=np.float32),
                bk=np.zeros(dim, dtype=np.float32),
                bv=np.zeros(dim, dtype=np.float32),
                wo=g(dim, dim), bo=np.zeros(dim, dtype=np.float32),
                ln2_gamma=np.ones(dim, dtype=np.float32),
                ln2_beta=np.zeros(dim, dtype=np.float32),
                w1=g(dim, 4 * dim), b1=np.zeros(4 * dim, dtype=np.float32),
                w2=g(4 * dim, dim), b2=np.zeros(dim, dtype=np.float32),
            )
        )
    gw, gh = pos_grid
    pos = PositionEmbedding(cls_pos=g(dim), grid=g(gh, gw, dim))
    stem = None
    patch_proj = None
    patch_bias = None
    if use_stem:
        if stem_ratio & (stem_ratio - 1) or stem_ratio < 2:
            raise ValueError(f"stem ratio must be a power of two >= 2, got {stem_ratio}")
        n_blocks = stem_ratio.bit_length() - 1
        chans = [in_channels] + [
            max(8, dim >> (n_blocks - 1 - i)) for i in range(n_blocks - 1)
        ] + [dim]
        convs = [
            (g(3, 3, chans[i], chans[i + 1]), np.zeros(chans[i + 1], dtype=np.float32))
            for i in range(n_blocks)
        ]
        stem = StemWeights(convs=convs)
    else:
        patch_proj = g(in_channels * patch * patch, dim)
        patch_bias = np.zeros(dim, dtype=np.float32)
    return EncoderWeights(
        dim=dim,
        heads=heads,
        layers=layer_list,
        cls_token=g(dim),
        pos=pos,
        stem=stem,
        patch_proj=patch_proj,
        patch_bias=patch_bias,
        patch=patch,
    )


def positions_for(seq: TokenSequence, enc: EncoderWeights, mode: str = "bilinear"):
    return resample_positions(enc.pos, seq.w, seq.h, mode=mode)
