"""ViM-UNet and its UNet / UNETR baselines on a small numpy autodiff core."""

__version__ = "0.1.0"
