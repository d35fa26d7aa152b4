"""Model/pipeline configuration: a single flat JSON document.

Unknown keys are rejected on load so ablation scripts fail loudly on typos.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dim: int = 64
    layers: int = 12
    heads: int = 4
    use_stem: bool = True
    stem_ratio: int = 16
    patch: int = 16
    pos_grid_w: int = 24
    pos_grid_h: int = 24
    pos_mode: str = "bilinear"  # bilinear | bicubic | cpe (stub)
    k: int = 6
    out_dim: int = 1536
    fusion: str = "orthogonal"
    use_global: bool = True
    use_local: bool = True
    use_elm: bool = True
    dilation_rates: list[int] = field(default_factory=lambda: [6, 12, 18])
    wb_blocks: int = 3
    wb_scale: float = 0.5
    irb_expansion: int = 4
    dropout: float = 0.2
    fusion_v1: float = 1.0
    fusion_v2: float = 1.0
    fusion_eps: float = 1e-4
    scales: list[float] = field(default_factory=lambda: [1.0, 0.7071067811865476, 0.5])
    whitening: bool = False
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.dim < 1 or self.dim % self.heads != 0:
            raise ConfigError(f"dim={self.dim} must be positive and divisible by heads={self.heads}")
        if self.layers < 0:
            raise ConfigError("layers must be nonnegative")
        if not 1 <= self.k <= max(self.layers, 1):
            raise ConfigError(f"k={self.k} must lie in 1..layers={self.layers}")
        if self.pos_mode == "cpe":
            raise ConfigError("conditional position embeddings: not implemented")
        if self.pos_mode not in ("bilinear", "bicubic"):
            raise ConfigError(f"unknown pos_mode {self.pos_mode!r}")
        if list(self.dilation_rates) != sorted(set(self.dilation_rates)):
            raise ConfigError("dilation_rates must be strictly increasing")
        if self.fusion not in (
            "none_without_elm", "none_with_elm", "sum", "hadamard",
            "concat", "fast_normalized", "orthogonal",
        ):
            raise ConfigError(f"unknown fusion method {self.fusion!r}")
        if not self.scales:
            raise ConfigError("scales must be nonempty")
        if any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.pos_grid_w < 1 or self.pos_grid_h < 1:
            raise ConfigError("position grid extents must be positive")
        return self

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw).validate()

    @classmethod
    def load(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
