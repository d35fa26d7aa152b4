#!/usr/bin/env python3
"""Generate a small procedural retrieval corpus as PPM files plus ground truth.

Creates `--classes` pattern classes with `--views` jittered views each, writes
them as binary PPM images, and emits a `gt.json` ground-truth file in the
format the `tokenpool evaluate` command expects (each image doubles as a
query; same-class images are easy positives, the query itself is junk).
"""

import argparse
import json
from pathlib import Path

import numpy as np

from tokenpool.io import write_image_ppm


def pattern_image(rng, params, size):
    fx, fy, phase, color = params
    pad = size // 4
    yy, xx = np.mgrid[0 : size + pad, 0 : size + pad].astype(np.float64)
    base = np.sin(fx * xx / size + phase) * np.cos(fy * yy / size)
    oy = int(rng.integers(0, pad + 1))
    ox = int(rng.integers(0, pad + 1))
    crop = base[oy : oy + size, ox : ox + size]
    img = np.stack([crop * c for c in color]) * 0.5 + 0.5
    img += rng.standard_normal(img.shape) * 0.02
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--classes", type=int, default=12)
    ap.add_argument("--views", type=int, default=5)
    ap.add_argument("--size", type=int, default=64, help="square image extent in pixels")
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    classes = [
        (
            float(rng.uniform(4, 40)),
            float(rng.uniform(4, 40)),
            float(rng.uniform(0, 2 * np.pi)),
            rng.uniform(0.2, 1.0, 3),
        )
        for _ in range(args.classes)
    ]
    ids, labels = [], []
    for ci, params in enumerate(classes):
        for vi in range(args.views):
            image_id = f"c{ci:02d}v{vi}"
            write_image_ppm(args.out / f"{image_id}.ppm", pattern_image(rng, params, args.size))
            ids.append(image_id)
            labels.append(ci)

    queries = [
        {
            "id": ids[i],
            "easy": [ids[j] for j in range(len(ids)) if labels[j] == labels[i] and j != i],
            "hard": [],
            "junk": [ids[i]],
        }
        for i in range(len(ids))
    ]
    (args.out / "gt.json").write_text(json.dumps({"queries": queries}, indent=2))
    print(f"wrote {len(ids)} images and gt.json to {args.out}")


if __name__ == "__main__":
    main()
