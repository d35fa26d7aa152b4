"""Full model assembly: encoder + pooling head behind one forward call."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import head as head_ops
from .config import ModelConfig
from .encoder import EncoderWeights, encode, init_encoder, positions_for, tokenize
from .head import ElmConfig, FusionConfig, HeadWeights, init_head


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    encoder: EncoderWeights
    head: HeadWeights

    @property
    def elm_config(self) -> ElmConfig:
        return ElmConfig(
            dilation_rates=tuple(self.config.dilation_rates),
            expansion=self.config.irb_expansion,
            wb_blocks=self.config.wb_blocks,
            wb_scale=self.config.wb_scale,
            mode="infer",
        )

    @property
    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            method=self.config.fusion,
            v1=self.config.fusion_v1,
            v2=self.config.fusion_v2,
            eps=self.config.fusion_eps,
        )


def init_model(config: ModelConfig) -> Model:
    """Deterministically initialize all weights from config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    enc = init_encoder(
        dim=config.dim,
        layers=config.layers,
        heads=config.heads,
        rng=rng,
        pos_grid=(config.pos_grid_w, config.pos_grid_h),
        use_stem=config.use_stem,
        stem_ratio=config.stem_ratio,
        patch=config.patch,
    )
    hd = init_head(
        dim=config.dim,
        k=config.k,
        out_dim=config.out_dim,
        fusion_method=config.fusion,
        elm_cfg=ElmConfig(
            dilation_rates=tuple(config.dilation_rates),
            expansion=config.irb_expansion,
            wb_blocks=config.wb_blocks,
            wb_scale=config.wb_scale,
        ),
        rng=rng,
        use_global=config.use_global,
        use_local=config.use_local,
        use_elm=config.use_elm,
    )
    return Model(config=config, encoder=enc, head=hd)


def forward_image(
    image: np.ndarray,
    model: Model,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Image (C, H, W) -> raw N-dim embedding (pre-normalization)."""
    cfg = model.config
    seq = tokenize(image, model.encoder)
    pos = positions_for(seq, model.encoder, mode=cfg.pos_mode)
    outputs = encode(seq, pos, model.encoder)
    feats = head_ops.collect_multilayer(outputs, cfg.k)

    u_c = None
    u_p = None
    if cfg.use_global:
        u_c = head_ops.global_branch(feats.f_c, model.head.global_w, model.head.global_b)
    if cfg.use_local:
        y = head_ops.reduce_channels(feats.f_p, model.head.reduce_w, model.head.reduce_b)
        if cfg.use_elm:
            elm_cfg = ElmConfig(
                dilation_rates=tuple(cfg.dilation_rates),
                expansion=cfg.irb_expansion,
                wb_blocks=cfg.wb_blocks,
                wb_scale=cfg.wb_scale,
                mode=mode,
            )
            u = head_ops.elm(y, model.head, elm_cfg, rng or np.random.default_rng(cfg.seed))
            y_fused = head_ops.fuse(y, u, model.fusion_config)
        else:
            y_fused = y
        u_p = head_ops.local_branch(y_fused, model.head.local_w, model.head.local_b)
    return head_ops.output_head(
        u_c, u_p, model.head, mode=mode, dropout=cfg.dropout, rng=rng
    )
