"""Command-line interface for the retrieval pipeline.

Subcommands: init-model, extract, index, search, evaluate, cka, attention,
plan-batches, selftest. All randomness derives from --seed; output files are
byte-identical for identical commands, seeds and inputs. DTOP_LOG selects
the log level (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as tio
from .analysis import cka_heatmap
from .config import ConfigError, ModelConfig
from .encoder import cls_attention_map, encode, positions_for, tokenize
from .model import init_model
from .pipeline import apply_whitening, Descriptor, extract_descriptor, learn_whitening
from .retrieval import crop_query, evaluate, search
from .sampler import ImageMeta, fixed_batches, group_batches

log = logging.getLogger("tokenpool")


def _setup_logging() -> None:
    level = os.environ.get("DTOP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"DTOP_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "fusion", None):
        cfg.fusion = args.fusion
    if getattr(args, "k", None):
        cfg.k = args.k
    if getattr(args, "scales", None):
        cfg.scales = args.scales
    return cfg.validate()


def _image_id(path: str) -> str:
    return Path(path).stem


def _extract_many(model, images, scales, threads, ids):
    def one(item):
        img, iid = item
        return extract_descriptor(img, model, scales=scales, image_id=iid)

    items = list(zip(images, ids))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            descs = list(pool.map(one, items))
    else:
        descs = [one(it) for it in items]
    return descs


def cmd_init_model(args) -> int:
    cfg = _load_config(args)
    model = init_model(cfg)
    tio.write_model_file(args.out, model)
    log.info("wrote model %s (dim=%d layers=%d)", args.out, cfg.dim, cfg.layers)
    return 0


def cmd_extract(args) -> int:
    model = tio.read_model_file(args.model)
    images = [tio.read_image_ppm(p) for p in args.images]
    ids = [_image_id(p) for p in args.images]
    descs = _extract_many(model, images, args.scales, args.threads, ids)
    matrix = np.stack([d.values for d in descs])
    tio.write_descriptor_db(args.out, matrix, ids)
    log.info("extracted %d descriptors -> %s", len(ids), args.out)
    return 0


def cmd_index(args) -> int:
    matrix, ids = tio.read_descriptor_db(args.descriptors)
    if args.whiten_pairs:
        with open(args.whiten_pairs, "r", encoding="utf-8") as fh:
            raw_pairs = json.load(fh)
        index_of = {iid: i for i, iid in enumerate(ids)}
        pairs = [(index_of[a], index_of[b]) for a, b in raw_pairs]
        transform = learn_whitening(matrix, pairs)
        if args.whitening_out:
            tio.write_tensor_file(f"{args.whitening_out}.proj.dtt", transform.projection)
            tio.write_tensor_file(f"{args.whitening_out}.mean.dtt", transform.mean)
    elif args.whitening_in:
        from .pipeline import WhiteningTransform

        transform = WhiteningTransform(
            projection=tio.read_tensor_file(f"{args.whitening_in}.proj.dtt"),
            mean=tio.read_tensor_file(f"{args.whitening_in}.mean.dtt"),
        )
    else:
        transform = None
    if transform is not None:
        rows = [
            apply_whitening(Descriptor(values=matrix[i], image_id=ids[i]), transform).values
            for i in range(len(ids))
        ]
        matrix = np.stack(rows)
    tio.write_descriptor_db(args.out, matrix, ids)
    return 0


def cmd_search(args) -> int:
    db, db_ids = tio.read_descriptor_db(args.db)
    queries, query_ids = tio.read_descriptor_db(args.queries)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query_id,rank,db_id,similarity\n")
        for qi, qid in enumerate(query_ids):
            ranked = search(db, db_ids, queries[qi])
            for r, (iid, sim) in enumerate(zip(ranked.ids[: args.top], ranked.similarities)):
                fh.write(f"{qid},{r},{iid},{sim:.9f}\n")
    return 0


def cmd_evaluate(args) -> int:
    db, db_ids = tio.read_descriptor_db(args.db)
    gt = tio.read_ground_truth(args.gt)
    if args.queries:
        queries, query_ids = tio.read_descriptor_db(args.queries)
    else:
        if not (args.model and args.images):
            raise ConfigError("evaluate needs either --queries or --model with --images")
        model = tio.read_model_file(args.model)
        imgs = []
        query_ids = []
        for q in gt.queries:
            img = tio.read_image_ppm(os.path.join(args.images, f"{q.query_id}.ppm"))
            if not args.no_crop:
                img = crop_query(img, q.bbox)
            imgs.append(img)
            query_ids.append(q.query_id)
        descs = _extract_many(model, imgs, args.scales, args.threads, query_ids)
        queries = np.stack([d.values for d in descs])
    result = evaluate(db, db_ids, queries, query_ids, gt, args.protocol)
    if args.out:
        tio.write_metrics_csv(args.out, result.per_query_ap, result.map_score, result.mp10)
    print(f"mAP ({args.protocol}): {result.map_score:.6f}")
    print(f"mP@10 ({args.protocol}): {result.mp10:.6f}")
    return 0


def cmd_cka(args) -> int:
    model = tio.read_model_file(args.model)
    images = [tio.read_image_ppm(p) for p in args.images]
    hm = cka_heatmap(model, images, patch_only=args.patch_only)
    tio.write_tensor_file(f"{args.out}.dtt", hm.matrix)
    with open(f"{args.out}.labels.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(hm.labels) + "\n")
    with open(f"{args.out}.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("," + ",".join(hm.labels) + "\n")
        for lbl, row in zip(hm.labels, hm.matrix):
            fh.write(lbl + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
    return 0


def cmd_attention(args) -> int:
    model = tio.read_model_file(args.model)
    image = tio.read_image_ppm(args.image)
    seq = tokenize(image, model.encoder)
    pos = positions_for(seq, model.encoder, mode=model.config.pos_mode)
    outputs = encode(seq, pos, model.encoder)
    layer = args.layer if args.layer is not None else model.config.layers
    tio.write_tensor_file(args.out, cls_attention_map(outputs, layer))
    return 0


def cmd_plan_batches(args) -> int:
    with open(args.metas, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    metas = [ImageMeta(image_id=m["id"], width=m["width"], height=m["height"]) for m in raw]
    if args.mode == "group":
        batches = group_batches(
            metas, args.batch_size, base_area=args.base_area,
            ratio_bins=args.ratio_bins, seed=args.seed or 0,
        )
    else:
        w, h = (int(v) for v in args.size.split("x"))
        batches = fixed_batches(metas, args.batch_size, size=(w, h), seed=args.seed or 0)
    plan = [
        {"ids": b.image_ids, "target_w": b.target_w, "target_h": b.target_h, "bucket": b.bucket}
        for b in batches
    ]
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(plan, fh, indent=2)
        fh.write("\n")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    passed, failed = run_selftest(seed=args.seed or 0)
    print(f"selftest: {passed} passed, {failed} failed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokenpool", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("init-model", help="initialize and save model weights")
    sp.add_argument("--config", default=None)
    sp.add_argument("--fusion", default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_init_model)

    sp = sub.add_parser("extract", help="compute descriptors for PPM images")
    sp.add_argument("--model", required=True)
    sp.add_argument("--scales", type=float, nargs="+", default=None)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("images", nargs="+")
    add_common(sp)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("index", help="build a searchable database (optionally whitened)")
    sp.add_argument("--descriptors", required=True)
    sp.add_argument("--whiten-pairs", default=None)
    sp.add_argument("--whitening-out", default=None)
    sp.add_argument("--whitening-in", default=None)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_index)

    sp = sub.add_parser("search", help="rank database entries per query")
    sp.add_argument("--db", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--top", type=int, default=100)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("evaluate", help="mAP / mP@10 under medium or hard protocol")
    sp.add_argument("--db", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--protocol", choices=("medium", "hard"), default="medium")
    sp.add_argument("--queries", default=None)
    sp.add_argument("--model", default=None)
    sp.add_argument("--images", default=None)
    sp.add_argument("--scales", type=float, nargs="+", default=None)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--no-crop", action="store_true")
    sp.add_argument("--out", default=None)
    add_common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("cka", help="layer-pair similarity heatmap")
    sp.add_argument("--model", required=True)
    sp.add_argument("--patch-only", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("images", nargs="+")
    add_common(sp)
    sp.set_defaults(func=cmd_cka)

    sp = sub.add_parser("attention", help="[CLS] attention map for one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--layer", type=int, default=None)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_attention)

    sp = sub.add_parser("plan-batches", help="plan aspect-grouped or fixed-size batches")
    sp.add_argument("--metas", required=True)
    sp.add_argument("--batch-size", type=int, required=True)
    sp.add_argument("--mode", choices=("group", "fixed"), default="group")
    sp.add_argument("--base-area", type=int, default=384 * 384)
    sp.add_argument("--ratio-bins", type=int, default=8)
    sp.add_argument("--size", default="384x384")
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_plan_batches)

    sp = sub.add_parser("selftest", help="run built-in oracle checks")
    add_common(sp)
    sp.set_defaults(func=cmd_selftest)

    return p


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"file error: {e}", file=sys.stderr)
        return 3
    except tio.FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
