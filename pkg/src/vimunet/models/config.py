"""Architecture configuration.

Standard ViT and Vim variant sizes::

    ViT   base  d=768  depth=12 heads=12
          large d=1024 depth=24 heads=16
          huge  d=1280 depth=32 heads=16
    ViM   tiny  d=192  depth=24
          small d=384  depth=24

``desk`` is an extra variant for every architecture, small enough to train
on one CPU core.  UNETR and ViM-UNet reuse the UNet decoder widths
``(8f, 4f, 2f, f)`` where ``f`` is ``unet_initial_features``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..numerics import ConfigError

__all__ = ["ModelConfig", "ARCHS", "VARIANTS", "ENCODER_TABLE", "DESK"]

ARCHS = ("unet", "unetr", "vimunet")
VARIANTS = {
    "unet": (None, "desk"),
    "unetr": ("base", "large", "huge", "desk"),
    "vimunet": ("tiny", "small", "desk"),
}
ENCODER_TABLE: dict[tuple[str, str], dict[str, int]] = {
    ("unetr", "base"): {"d_model": 768, "depth": 12, "heads": 12},
    ("unetr", "large"): {"d_model": 1024, "depth": 24, "heads": 16},
    ("unetr", "huge"): {"d_model": 1280, "depth": 32, "heads": 16},
    ("vimunet", "tiny"): {"d_model": 192, "depth": 24, "heads": 0},
    ("vimunet", "small"): {"d_model": 384, "depth": 24, "heads": 0},
}
# desk-scale stand-ins, shared decoder width f=8
DESK: dict[str, dict[str, int]] = {
    "unet": {"unet_initial_features": 8},
    "unetr": {"d_model": 64, "depth": 4, "heads": 4, "unet_initial_features": 8},
    "vimunet": {"d_model": 64, "depth": 4, "heads": 0, "unet_initial_features": 8},
}


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    variant: str | None = None
    in_channels: int = 1
    out_channels: int = 2
    patch_size: int = 16
    image_size: int = 256
    unet_depth: int = 4
    unet_initial_features: int | None = None
    d_model: int | None = None
    depth: int | None = None
    heads: int | None = None
    d_state: int = 16
    expand: int = 2
    conv_kernel: int = 4
    mlp_ratio: int = 4

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.variant not in VARIANTS[self.arch]:
            raise ConfigError(
                f"unknown variant {self.variant!r} for {self.arch}; "
                f"expected one of {VARIANTS[self.arch]}")
        # fill encoder dims from the tables unless given explicitly
        table = {}
        if self.variant == "desk":
            table = DESK[self.arch]
        elif self.arch != "unet":
            table = ENCODER_TABLE[(self.arch, self.variant)]
        for key, value in table.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, value)
        if self.unet_initial_features is None:
            object.__setattr__(self, "unet_initial_features", 64)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("in_channels and out_channels must be >= 1")
        if self.unet_depth < 1 or self.unet_initial_features < 1:
            raise ConfigError("unet_depth and unet_initial_features must be >= 1")
        if self.arch == "unet":
            if self.image_size % 2 ** self.unet_depth:
                raise ConfigError(
                    f"image_size {self.image_size} not divisible by 2**{self.unet_depth}")
            return
        if self.patch_size != 2 ** self.unet_depth:
            raise ConfigError(
                f"patch_size {self.patch_size} must equal 2**unet_depth so the decoder "
                f"recovers full resolution")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.d_model is None or self.depth is None or self.d_model < 1 or self.depth < 0:
            raise ConfigError(f"{self.arch} needs d_model >= 1 and depth >= 0")
        if self.arch == "unetr" and (not self.heads or self.d_model % self.heads):
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        f = self.unet_initial_features
        return tuple(f * 2 ** level for level in reversed(range(self.unet_depth)))

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def name(self) -> str:
        return self.arch if self.variant is None else f"{self.arch}-{self.variant}"

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown model config fields: {unknown}")
        if "arch" not in data:
            raise ConfigError("model config needs an 'arch' field")
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
