"""File formats: DTT tensors, P6 PPM images, model weight bundles,
descriptor databases, ground-truth JSON and CSV reports.

DTT: magic "DTT1", one byte rank (1..4), rank little-endian uint32 extents,
then float32 payload, row-major little-endian. Model bundle (DTM1): magic,
uint32 JSON-config length + bytes, uint32 tensor count, then per tensor a
uint32 name length, name bytes, and an embedded DTT record.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig
from .encoder import EncoderWeights, LayerWeights, StemWeights
from .head import AsppWeights, HeadWeights, IrbWeights
from .model import Model
from .position import PositionEmbedding
from .retrieval import GroundTruth

DTT_MAGIC = b"DTT1"
MODEL_MAGIC = b"DTM1"


class FormatError(ValueError):
    pass


def tensor_to_bytes(t: np.ndarray) -> bytes:
    a = np.ascontiguousarray(t, dtype="<f4")
    if not 1 <= a.ndim <= 4:
        raise FormatError(f"rank {a.ndim} outside supported range 1..4")
    header = DTT_MAGIC + struct.pack("<B", a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one DTT record; returns (tensor, next offset)."""
    if buf[offset : offset + 4] != DTT_MAGIC:
        raise FormatError(f"bad magic at offset {offset}")
    pos = offset + 4
    if pos >= len(buf):
        raise FormatError("truncated header")
    rank = buf[pos]
    pos += 1
    if not 1 <= rank <= 4:
        raise FormatError(f"rank {rank} outside supported range 1..4")
    if pos + 4 * rank > len(buf):
        raise FormatError("truncated extents")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape))
    end = pos + 4 * count
    if end > len(buf):
        raise FormatError(f"truncated payload: need {4 * count} bytes")
    data = np.frombuffer(buf[pos:end], dtype="<f4").reshape(shape)
    return data.astype(np.float32), end


def write_tensor_file(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def read_tensor_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor")
    return t


def read_image_ppm(path) -> np.ndarray:
    """Binary P6 PPM (maxval 255) -> (3, H, W) float tensor in [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(buf):
            raise FormatError("truncated PPM header")
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            pos += 1
            continue
        if buf[pos : pos + 1].isspace():
            pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"unsupported PPM format {fields[0].decode(errors='replace')!r}; only binary P6")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255")
    pos += 1  # single whitespace byte after maxval
    need = 3 * w * h
    pixels = buf[pos : pos + need]
    if len(pixels) < need:
        raise FormatError(f"short pixel data: {len(pixels)} of {need} bytes")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def write_image_ppm(path, image: np.ndarray) -> None:
    """(3, H, W) float tensor in [0, 1] -> binary P6 PPM."""
    c, h, w = image.shape
    if c != 3:
        raise FormatError("PPM output requires 3 channels")
    bytes_img = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(bytes_img.transpose(1, 2, 0).tobytes())


# -- model bundle ------------------------------------------------------------

def _encoder_tensors(enc: EncoderWeights) -> dict[str, np.ndarray]:
    out = {
        "enc.cls_token": enc.cls_token,
        "enc.pos.cls": enc.pos.cls_pos,
        "enc.pos.grid": enc.pos.grid,
    }
    for i, lw in enumerate(enc.layers):
        for name in (
            "ln1_gamma", "ln1_beta", "wq", "wk", "wv", "bq", "bk", "bv",
            "wo", "bo", "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2",
        ):
            out[f"enc.layer{i}.{name}"] = getattr(lw, name)
    if enc.stem is not None:
        for i, (w, b) in enumerate(enc.stem.convs):
            out[f"enc.stem{i}.w"] = w
            out[f"enc.stem{i}.b"] = b
    else:
        out["enc.patch.proj"] = enc.patch_proj
        out["enc.patch.bias"] = enc.patch_bias
    return out


def _head_tensors(hd: HeadWeights) -> dict[str, np.ndarray]:
    out = {"head.out.w": hd.out_w, "head.out.b": hd.out_b}
    for name in ("bn_mean", "bn_var", "bn_gamma", "bn_beta"):
        if getattr(hd, name) is not None:
            out[f"head.{name}"] = getattr(hd, name)
    if hd.global_w is not None:
        out["head.global.w"] = hd.global_w
        out["head.global.b"] = hd.global_b
    if hd.reduce_w is not None:
        out["head.reduce.w"] = hd.reduce_w
        out["head.reduce.b"] = hd.reduce_b
    if hd.irb is not None:
        for name in ("expand_w", "expand_b", "depthwise_w", "depthwise_b",
                     "squeeze_w", "squeeze_b"):
            out[f"head.irb.{name}"] = getattr(hd.irb, name)
    if hd.aspp is not None:
        for i, (w, b) in enumerate(zip(hd.aspp.branch_w, hd.aspp.branch_b)):
            out[f"head.aspp.branch{i}.w"] = w
            out[f"head.aspp.branch{i}.b"] = b
        out["head.aspp.reduce.w"] = hd.aspp.reduce_w
        out["head.aspp.reduce.b"] = hd.aspp.reduce_b
    if hd.local_w is not None:
        out["head.local.w"] = hd.local_w
        out["head.local.b"] = hd.local_b
    return out


def write_model_file(path, model: Model) -> None:
    tensors = {**_encoder_tensors(model.encoder), **_head_tensors(model.head)}
    cfg_bytes = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(tensor_to_bytes(tensors[name]))


def read_model_file(path) -> Model:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic at offset 0")
    pos = 4
    (cfg_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config = ModelConfig.from_dict(json.loads(buf[pos : pos + cfg_len].decode()))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        tensors[name], pos = tensor_from_bytes(buf, pos)
    return _assemble_model(config, tensors)


def _assemble_model(config: ModelConfig, t: dict[str, np.ndarray]) -> Model:
    layers = []
    for i in range(config.layers):
        kw = {
            name: t[f"enc.layer{i}.{name}"]
            for name in (
                "ln1_gamma", "ln1_beta", "wq", "wk", "wv", "bq", "bk", "bv",
                "wo", "bo", "ln2_gamma", "ln2_beta", "w1", "b1", "w2", "b2",
            )
        }
        layers.append(LayerWeights(**kw))
    pos = PositionEmbedding(cls_pos=t["enc.pos.cls"], grid=t["enc.pos.grid"])
    stem = None
    patch_proj = None
    patch_bias = None
    if config.use_stem:
        convs = []
        i = 0
        while f"enc.stem{i}.w" in t:
            convs.append((t[f"enc.stem{i}.w"], t[f"enc.stem{i}.b"]))
            i += 1
        stem = StemWeights(convs=convs)
    else:
        patch_proj = t["enc.patch.proj"]
        patch_bias = t["enc.patch.bias"]
    enc = EncoderWeights(
        dim=config.dim, heads=config.heads, layers=layers,
        cls_token=t["enc.cls_token"], pos=pos, stem=stem,
        patch_proj=patch_proj, patch_bias=patch_bias, patch=config.patch,
    )
    irb_w = None
    if "head.irb.expand_w" in t:
        irb_w = IrbWeights(
            expand_w=t["head.irb.expand_w"], expand_b=t["head.irb.expand_b"],
            depthwise_w=t["head.irb.depthwise_w"], depthwise_b=t["head.irb.depthwise_b"],
            squeeze_w=t["head.irb.squeeze_w"], squeeze_b=t["head.irb.squeeze_b"],
        )
    aspp_w = None
    if "head.aspp.reduce.w" in t:
        branch_w = []
        branch_b = []
        i = 0
        while f"head.aspp.branch{i}.w" in t:
            branch_w.append(t[f"head.aspp.branch{i}.w"])
            branch_b.append(t[f"head.aspp.branch{i}.b"])
            i += 1
        aspp_w = AsppWeights(
            branch_w=branch_w, branch_b=branch_b,
            reduce_w=t["head.aspp.reduce.w"], reduce_b=t["head.aspp.reduce.b"],
        )
    hd = HeadWeights(
        global_w=t.get("head.global.w"), global_b=t.get("head.global.b"),
        reduce_w=t.get("head.reduce.w"), reduce_b=t.get("head.reduce.b"),
        irb=irb_w, aspp=aspp_w,
        local_w=t.get("head.local.w"), local_b=t.get("head.local.b"),
        out_w=t["head.out.w"], out_b=t["head.out.b"],
        bn_mean=t.get("head.bn_mean"), bn_var=t.get("head.bn_var"),
        bn_gamma=t.get("head.bn_gamma"), bn_beta=t.get("head.bn_beta"),
    )
    return Model(config=config, encoder=enc, head=hd)


# -- descriptor databases and reports ---------------------------------------

def write_descriptor_db(basename: str, matrix: np.ndarray, ids: list[str]) -> None:
    if matrix.shape[0] != len(ids):
        raise FormatError("descriptor count must match id count")
    write_tensor_file(f"{basename}.dtt", matrix)
    with open(f"{basename}.ids.json", "w", encoding="utf-8") as fh:
        json.dump(ids, fh)
        fh.write("\n")


def read_descriptor_db(basename: str) -> tuple[np.ndarray, list[str]]:
    matrix = read_tensor_file(f"{basename}.dtt")
    with open(f"{basename}.ids.json", "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    if matrix.shape[0] != len(ids):
        raise FormatError("descriptor count does not match sidecar id count")
    return matrix, list(ids)


def read_ground_truth(path) -> GroundTruth:
    with open(path, "r", encoding="utf-8") as fh:
        return GroundTruth.from_dict(json.load(fh))


def write_metrics_csv(path, per_query_ap: dict[str, float], map_score: float, mp10: float) -> None:
    lines = [f"{qid},{ap:.12f}" for qid, ap in per_query_ap.items()]
    lines.append(f"mAP,{map_score:.12f}")
    lines.append(f"mP@10,{mp10:.12f}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query_id,ap\n")
        fh.write("\n".join(lines))
        fh.write("\n")
