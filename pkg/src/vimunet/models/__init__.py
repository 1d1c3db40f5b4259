"""UNet, UNETR and ViM-UNet architectures."""

from .architectures import SegmentationModel, TransformerUNet, UNet, build_model, count_parameters
from .blocks import PatchEmbed, ViTBlock, ViTEncoder, VimEncoder, ConvDecoder, DoubleConv
from .config import ARCHS, DESK, ENCODER_TABLE, VARIANTS, ModelConfig

__all__ = [
    "ModelConfig",
    "ARCHS",
    "VARIANTS",
    "ENCODER_TABLE",
    "DESK",
    "SegmentationModel",
    "UNet",
    "TransformerUNet",
    "build_model",
    "count_parameters",
    "PatchEmbed",
    "ViTBlock",
    "ViTEncoder",
    "VimEncoder",
    "ConvDecoder",
    "DoubleConv",
]
