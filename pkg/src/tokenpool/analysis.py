"""Representation similarity between encoder layers via linear CKA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import encode, positions_for, tokenize
from .model import Model


@dataclass(frozen=True)
class CkaHeatmap:
    matrix: np.ndarray  # (L, L)
    labels: list[str]


def linear_cka(a: np.ndarray, b: np.ndarray) -> float:
    """Linear CKA between (n, d1) and (n, d2) feature matrices.

    Columns are centered internally; the value equals the correlation of the
    two Gram matrices and is invariant to orthogonal transforms and
    isotropic scaling of either argument.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"feature shapes incompatible: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    denom_a = np.linalg.norm(ac.T @ ac)
    denom_b = np.linalg.norm(bc.T @ bc)
    if denom_a == 0 or denom_b == 0:
        raise ValueError("zero-variance features: all rows identical")
    return float(np.linalg.norm(ac.T @ bc) ** 2 / (denom_a * denom_b))


def layer_features(
    model: Model, images: list[np.ndarray], patch_only: bool = False
) -> list[np.ndarray]:
    """Per-layer (n_images, D) matrices of mean-pooled token embeddings.

    Covers encoder layers 1..L. patch_only excludes the [CLS] row from the
    pooling mean.
    """
    per_layer = None
    for img in images:
        seq = tokenize(img, model.encoder)
        pos = positions_for(seq, model.encoder, mode=model.config.pos_mode)
        outs = encode(seq, pos, model.encoder)
        taps = outs.layers[1:]
        if per_layer is None:
            per_layer = [[] for _ in taps]
        for li, z in enumerate(taps):
            toks = z[1:] if patch_only else z
            per_layer[li].append(toks.astype(np.float64).mean(axis=0))
    return [np.stack(rows) for rows in per_layer]


def cka_heatmap(
    model: Model, images: list[np.ndarray], patch_only: bool = False
) -> CkaHeatmap:
    """L x L pairwise linear CKA over per-image layer features."""
    if len(images) < 2:
        raise ValueError("need at least 2 images")
    feats = layer_features(model, images, patch_only=patch_only)
    n_layers = len(feats)
    m = np.ones((n_layers, n_layers), dtype=np.float64)
    for i in range(n_layers):
        for j in range(i, n_layers):
            v = linear_cka(feats[i], feats[j])
            m[i, j] = v
            m[j, i] = v
    return CkaHeatmap(
        matrix=m.astype(np.float32),
        labels=[f"layer{i + 1}" for i in range(n_layers)],
    )
