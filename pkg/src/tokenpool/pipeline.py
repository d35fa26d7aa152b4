"""Descriptor extraction and post-processing.

An image becomes a unit-norm descriptor by multi-scale inference (each scale
resized to multiples of the stem ratio, embedded, L2-normalized) followed by
averaging and re-normalization. Supervised whitening is learned from labeled
matching pairs: the intra-pair difference covariance is whitened and the
result rotated into the eigenbasis of the projected total covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import l2_normalize, resample_bilinear
from .model import Model, forward_image

EIG_FLOOR_FRACTION = 1e-6


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray  # (N,), unit norm
    image_id: str


@dataclass(frozen=True)
class WhiteningTransform:
    projection: np.ndarray  # (N, N)
    mean: np.ndarray  # (N,)


def round_to_multiple(x: float, base: int) -> int:
    """Round half up to the nearest multiple of base, flooring at base."""
    return max(base, int(np.floor(x / base + 0.5)) * base)


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image."""
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be positive")
    hw = image.transpose(1, 2, 0)
    return resample_bilinear(hw, out_h, out_w).transpose(2, 0, 1)


def extract_descriptor(
    image: np.ndarray,
    model: Model,
    scales: list[float] | None = None,
    image_id: str = "",
) -> Descriptor:
    """Multi-scale inference-mode descriptor for one (C, H, W) image."""
    cfg = model.config
    if scales is None:
        scales = cfg.scales
    if not scales:
        raise ValueError("scales must be nonempty")
    base = cfg.stem_ratio if cfg.use_stem else cfg.patch
    _, h, w = image.shape
    acc = None
    for s in scales:
        th = round_to_multiple(h * s, base)
        tw = round_to_multiple(w * s, base)
        scaled = image if (th, tw) == (h, w) else resize_image(image, th, tw)
        u = l2_normalize(forward_image(scaled, model, mode="infer"))
        acc = u.astype(np.float64) if acc is None else acc + u
    return Descriptor(values=l2_normalize(acc / len(scales)), image_id=image_id)


def learn_whitening(
    descriptors: np.ndarray, pairs: list[tuple[int, int]]
) -> WhiteningTransform:
    """Learn a discriminative whitening transform from matching pairs.

    descriptors: (n, N) matrix; pairs: index pairs of matching rows.
    The projection maps matching-pair differences to (approximately)
    identity covariance, then rotates by the eigenbasis of the projected
    total covariance so output axes are ordered by discriminative variance.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 descriptors of shape (n, N)")
    if not pairs:
        raise ValueError("need at least one matching pair")
    n, dim = x.shape
    diffs = np.stack([x[i] - x[j] for i, j in pairs])
    cs = diffs.T @ diffs / len(diffs)
    if not np.any(cs):
        raise ValueError("all matching pairs identical: rank-0 pair covariance")
    evals, evecs = np.linalg.eigh(cs)
    floor = EIG_FLOOR_FRACTION * np.trace(cs) / dim
    evals = np.maximum(evals, floor)
    inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T

    mean = x.mean(axis=0)
    xc = x - mean
    cd = xc.T @ xc / n
    projected = inv_sqrt @ cd @ inv_sqrt
    evals_d, rot = np.linalg.eigh(projected)
    order = np.argsort(evals_d)[::-1]
    projection = rot[:, order].T @ inv_sqrt
    return WhiteningTransform(
        projection=projection.astype(np.float32), mean=mean.astype(np.float32)
    )


def apply_whitening(d: Descriptor, t: WhiteningTransform) -> Descriptor:
    if d.values.shape[0] != t.mean.shape[0]:
        raise ValueError("descriptor/transform dimension mismatch")
    v = t.projection.astype(np.float64) @ (d.values.astype(np.float64) - t.mean)
    return Descriptor(values=l2_normalize(v), image_id=d.image_id)
