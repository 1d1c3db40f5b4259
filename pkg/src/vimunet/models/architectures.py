"""UNet, UNETR and ViM-UNet built from a `ModelConfig`."""

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..numerics import ShapeError, Tensor
from ..numerics.module import Init, MetaInit, Module
from .blocks import (
    Conv,
    ConvDecoder,
    Deconv,
    DoubleConv,
    PatchEmbed,
    ViTEncoder,
    VimEncoder,
    tokens_to_map,
)
from .config import ModelConfig

__all__ = ["UNet", "TransformerUNet", "SegmentationModel", "build_model", "count_parameters"]


class SegmentationModel(Module):
    """Maps ``[C_in, H, W]`` (or ``[N, C_in, H, W]``) to ``[C_out, H, W]``."""

    config: ModelConfig

    def _check_input(self, image: Tensor) -> None:
        cfg = self.config
        if image.ndim not in (3, 4) or image.shape[-3] != cfg.in_channels:
            raise ShapeError(f"{cfg.name}: expected [{cfg.in_channels}, H, W] input, got {image.shape}")


class UNet(SegmentationModel):
    """Classic UNet: double-conv levels, max-pool down, transposed-conv up, skip concat."""

    def __init__(self, config: ModelConfig, init: Init | MetaInit):
        self.config = config
        widths = [config.unet_initial_features * 2 ** k for k in range(config.unet_depth)]
        enc, c = [], config.in_channels
        for w in widths:
            enc.append(DoubleConv(c, w, init))
            c = w
        self.encoder = enc
        self.bottleneck = DoubleConv(c, 2 * c, init)
        c *= 2
        ups, dec = [], []
        for w in reversed(widths):
            ups.append(Deconv(c, w, init))
            dec.append(DoubleConv(2 * w, w, init))
            c = w
        self.ups = ups
        self.decoder = dec
        self.head = Conv(c, config.out_channels, 1, init)

    def level_widths(self) -> list[int]:
        return [level.conv1.weight.shape[0] for level in self.encoder]

    def __call__(self, image: Tensor) -> Tensor:
        self._check_input(image)
        depth = self.config.unet_depth
        h, w = image.shape[-2:]
        if h % 2 ** depth or w % 2 ** depth:
            raise ShapeError(f"unet: spatial size {(h, w)} not divisible by 2**{depth}")
        skips, x = [], image
        for level in self.encoder:
            x = level(x)
            skips.append(x)
            x = nx.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, level, skip in zip(self.ups, self.decoder, reversed(skips)):
            x = level(nx.concat([up(x), skip], axis=x.ndim - 3))
        return self.head(x)


class TransformerUNet(SegmentationModel):
    """Patch encoder (ViT or ViM) followed by the shared convolutional decoder."""

    def __init__(self, config: ModelConfig, init: Init | MetaInit):
        self.config = config
        cfg = config
        self.patch_embed = PatchEmbed(cfg.in_channels, cfg.patch_size, cfg.d_model,
                                      cfg.grid ** 2, init)
        if cfg.arch == "unetr":
            self.encoder = ViTEncoder(cfg.d_model, cfg.depth, cfg.heads, cfg.mlp_ratio, init)
        else:
            self.encoder = VimEncoder(cfg.d_model, cfg.depth, cfg.d_state, cfg.expand,
                                      cfg.conv_kernel, init)
        self.decoder = ConvDecoder(cfg.d_model, cfg.decoder_widths, cfg.out_channels, init)

    def encode(self, image: Tensor) -> Tensor:
        return self.encoder(self.patch_embed(image))

    def __call__(self, image: Tensor) -> Tensor:
        self._check_input(image)
        p = self.config.patch_size
        h, w = image.shape[-2:]
        tokens = self.encode(image)
        return self.decoder(tokens_to_map(tokens, (h // p, w // p)))


def build_model(config: ModelConfig, seed: int | np.random.Generator = 0,
                dtype=np.float32) -> SegmentationModel:
    init = Init(seed, dtype)
    if config.arch == "unet":
        return UNet(config, init)
    return TransformerUNet(config, init)


def count_parameters(config: ModelConfig) -> int:
    """Exact parameter count from shapes alone; nothing is allocated."""
    init = MetaInit()
    model = UNet(config, init) if config.arch == "unet" else TransformerUNet(config, init)
    return model.num_parameters()
