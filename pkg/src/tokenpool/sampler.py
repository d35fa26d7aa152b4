"""Mini-batch planning by aspect ratio.

Group-size batching sorts images into equal-population aspect-ratio buckets
(quantile cuts) and resizes every image of a batch to one target whose aspect
matches the bucket median and whose area is closest to a base area, both
extents rounded to multiples of the stem ratio. A fixed-size planner serves
as the ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pipeline import round_to_multiple

SIZE_MULTIPLE = 16


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width: int
    height: int

    @property
    def aspect(self) -> float:
        return self.width / self.height


@dataclass(frozen=True)
class BatchGroup:
    image_ids: list[str]
    target_w: int
    target_h: int
    bucket: int

    def __post_init__(self):
        if self.target_w % SIZE_MULTIPLE or self.target_h % SIZE_MULTIPLE:
            raise ValueError("batch target extents must be multiples of 16")


def target_for_aspect(aspect: float, base_area: int) -> tuple[int, int]:
    """Size with area closest to base_area at the given aspect, rounded."""
    w = round_to_multiple(np.sqrt(base_area * aspect), SIZE_MULTIPLE)
    h = round_to_multiple(np.sqrt(base_area / aspect), SIZE_MULTIPLE)
    return w, h


def group_batches(
    metas: list[ImageMeta],
    batch_size: int,
    base_area: int = 384 * 384,
    ratio_bins: int = 8,
    seed: int = 0,
) -> list[BatchGroup]:
    if not metas:
        raise ValueError("empty image list")
    if batch_size < 1 or ratio_bins < 1:
        raise ValueError("batch_size and ratio_bins must be >= 1")
    aspects = np.array([m.aspect for m in metas])
    order = np.argsort(aspects, kind="stable")
    bins = min(ratio_bins, len(metas))
    edges = np.linspace(0, len(metas), bins + 1).astype(int)
    rng = np.random.default_rng(seed)
    batches = []
    for b in range(bins):
        idx = order[edges[b] : edges[b + 1]]
        if len(idx) == 0:
            continue
        median_aspect = float(np.median(aspects[idx]))
        tw, th = target_for_aspect(median_aspect, base_area)
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start : start + batch_size]
            batches.append(
                BatchGroup(
                    image_ids=[metas[i].image_id for i in chunk],
                    target_w=tw,
                    target_h=th,
                    bucket=b,
                )
            )
    return batches


def fixed_batches(
    metas: list[ImageMeta],
    batch_size: int,
    size: tuple[int, int] = (384, 384),
    seed: int = 0,
) -> list[BatchGroup]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    w, h = size
    if w % SIZE_MULTIPLE or h % SIZE_MULTIPLE:
        raise ValueError("fixed size must be multiples of 16")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(metas))
    return [
        BatchGroup(
            image_ids=[metas[i].image_id for i in idx[s : s + batch_size]],
            target_w=w,
            target_h=h,
            bucket=0,
        )
        for s in range(0, len(metas), batch_size)
    ]
