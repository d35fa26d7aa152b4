"""Dynamic position embeddings: a fixed learned grid resampled per input size.

The learned state is a [CLS] position vector plus a w' x h' x D grid. For an
input token grid of size w x h the grid is resampled (bilinear by default,
bicubic for the ablation switch) and folded back to a sequence; the [CLS]
position is prepended untouched. Align-corners interpolation is an assumption
of this implementation, not an externally fixed convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import resample_bicubic, resample_bilinear

MODES = ("bilinear", "bicubic")


@dataclass(frozen=True)
class PositionEmbedding:
    cls_pos: np.ndarray  # (D,)
    grid: np.ndarray  # (h', w', D) row-major

    def __post_init__(self):
        if self.cls_pos.ndim != 1 or self.grid.ndim != 3:
            raise ValueError("cls_pos must be (D,), grid must be (h', w', D)")
        if self.grid.shape[2] != self.cls_pos.shape[0]:
            raise ValueError("grid channel dim must match cls_pos length")

    @property
    def dim(self) -> int:
        return self.cls_pos.shape[0]


def unfold_grid(tokens: np.ndarray, w: int, h: int) -> np.ndarray:
    """Sequence (w*h, D) -> grid (h, w, D), row-major (h rows of w entries)."""
    if tokens.shape[0] != w * h:
        raise ValueError(f"expected {w * h} tokens, got {tokens.shape[0]}")
    return tokens.reshape(h, w, tokens.shape[1])


def fold_grid(grid: np.ndarray) -> np.ndarray:
    """Grid (h, w, D) -> sequence (w*h, D), inverse of unfold_grid."""
    return grid.reshape(-1, grid.shape[2])


def resample_positions(
    pe: PositionEmbedding, w: int, h: int, mode: str = "bilinear"
) -> np.ndarray:
    """Produce the (M+1) x D position sequence for a w x h token grid.

    Row 0 is the [CLS] position, bit-identical to the stored vector; rows
    1..M are the stored grid resampled to h x w and folded row-major.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target resolution must be positive, got {w}x{h}")
    if mode not in MODES:
        raise ValueError(f"unknown interpolation mode {mode!r}; expected one of {MODES}")
    src_h, src_w, _ = pe.grid.shape
    if (h, w) == (src_h, src_w):
        patches = pe.grid
    elif mode == "bilinear":
        patches = resample_bilinear(pe.grid, h, w)
    else:
        patches = resample_bicubic(pe.grid, h, w)
    return np.concatenate([pe.cls_pos[None, :], fold_grid(patches)], axis=0)
