"""Building blocks shared by the three architectures."""

from __future__ import annotations

import math

from .. import numerics as nx
from ..numerics import ShapeError, Tensor
from ..numerics.module import Init, MetaInit, Module
from ..ssm import VimBlockParams

__all__ = [
    "Conv",
    "Deconv",
    "DoubleConv",
    "DecoderLevel",
    "ConvDecoder",
    "PatchEmbed",
    "ViTBlock",
    "ViTEncoder",
    "VimEncoder",
    "tokens_to_map",
]

Initializer = Init | MetaInit


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, init: Initializer):
        fan_in = c_in * kernel * kernel
        # He-uniform: the convs feed ReLUs
        self.weight = init.uniform((c_out, c_in, kernel, kernel), math.sqrt(6.0 / fan_in))
        self.bias = init.zeros((c_out,))
        self._padding = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return nx.conv2d(x, self.weight, self.bias, stride=1, padding=self._padding)


class Deconv(Module):
    """2x upsampling transposed conv, kernel 2 stride 2."""

    def __init__(self, c_in: int, c_out: int, init: Initializer):
        self.weight = init.uniform((c_in, c_out, 2, 2), math.sqrt(6.0 / (c_in * 4)))
        self.bias = init.zeros((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.transposed_conv2d(x, self.weight, self.bias, stride=2)


class DoubleConv(Module):
    """Two 3x3 conv + ReLU layers."""

    def __init__(self, c_in: int, c_out: int, init: Initializer):
        self.conv1 = Conv(c_in, c_out, 3, init)
        self.conv2 = Conv(c_out, c_out, 3, init)

    def __call__(self, x: Tensor) -> Tensor:
        return nx.relu(self.conv2(nx.relu(self.conv1(x))))


def _cat_channels(a: Tensor, b: Tensor) -> Tensor:
    return nx.concat([a, b], axis=a.ndim - 3)


class DecoderLevel(Module):
    """Upsample the previous state, join the encoder map resampled to this level, two convs.

    ``chain_widths`` lists the channels after each 2x step of the dedicated
    encoder-map resampling chain; its length is this level's distance (in 2x
    steps) from the patch grid.
    """

    def __init__(self, c_prev: int, c_enc: int, width: int, chain_widths: list[int],
                 init: Initializer):
        self.up = Deconv(c_prev, width, init)
        chain, c = [], c_enc
        for w in chain_widths:
            chain.append(Deconv(c, w, init))
            c = w
        self.chain = chain
        self.convs = DoubleConv(width + c, width, init)

    def __call__(self, prev: Tensor, enc: Tensor) -> Tensor:
        z = enc
        for step in self.chain:
            z = nx.relu(step(z))
        return self.convs(_cat_channels(self.up(prev), z))


class ConvDecoder(Module):
    """UNETR-style decoder: no encoder-level skips, only the resampled encoder map."""

    def __init__(self, d_model: int, widths: tuple[int, ...], out_channels: int,
                 init: Initializer):
        levels, c = [], d_model
        for k, w in enumerate(widths):
            levels.append(DecoderLevel(c, d_model, w, list(widths[:k + 1]), init))
            c = w
        self.levels = levels
        self.head = Conv(c, out_channels, 1, init)

    def __call__(self, enc_map: Tensor) -> Tensor:
        x = enc_map
        for level in self.levels:
            x = level(x, enc_map)
        return self.head(x)


class PatchEmbed(Module):
    """Non-overlapping ``p x p`` patches -> tokens, plus a learned position table."""

    def __init__(self, in_channels: int, patch: int, d_model: int, n_tokens: int,
                 init: Initializer):
        fan_in = in_channels * patch * patch
        self.weight = init.fan_in((fan_in, d_model), fan_in)
        self.bias = init.zeros((d_model,))
        self.pos = init.normal((n_tokens, d_model), 0.02)
        self._patch = patch

    def __call__(self, image: Tensor) -> Tensor:
        batched = image.ndim == 4
        x = image if batched else nx.reshape(image, (1,) + image.shape)
        n, c, h, w = x.shape
        p = self._patch
        if h % p or w % p:
            raise ShapeError(f"patch_embed: spatial size {(h, w)} not divisible by patch {p}")
        gh, gw = h // p, w // p
        if gh * gw != self.pos.shape[0]:
            raise ShapeError(
                f"patch_embed: {gh * gw} patches but position table has {self.pos.shape[0]}")
        # [N,C,gh,p,gw,p] -> [N,gh,gw,C,p,p], raster order of patches
        patches = nx.transpose(nx.reshape(x, (n, c, gh, p, gw, p)), (0, 2, 4, 1, 3, 5))
        patches = nx.reshape(patches, (n, gh * gw, c * p * p))
        tokens = nx.linear(patches, self.weight, self.bias) + self.pos
        return tokens if batched else nx.reshape(tokens, tokens.shape[1:])


class ViTBlock(Module):
    """Pre-norm multi-head self-attention + GELU MLP."""

    def __init__(self, d_model: int, heads: int, mlp_ratio: int, init: Initializer):
        if d_model % heads:
            raise nx.ConfigError(f"d_model {d_model} not divisible by {heads} heads")
        hidden = mlp_ratio * d_model
        self.norm1_gamma = init.ones((d_model,))
        self.norm1_beta = init.zeros((d_model,))
        self.qkv_w = init.fan_in((d_model, 3 * d_model), d_model)
        self.qkv_b = init.zeros((3 * d_model,))
        self.proj_w = init.fan_in((d_model, d_model), d_model)
        self.proj_b = init.zeros((d_model,))
        self.norm2_gamma = init.ones((d_model,))
        self.norm2_beta = init.zeros((d_model,))
        self.fc1_w = init.fan_in((d_model, hidden), d_model)
        self.fc1_b = init.zeros((hidden,))
        self.fc2_w = init.fan_in((hidden, d_model), hidden)
        self.fc2_b = init.zeros((d_model,))
        self._heads = heads

    def attention_weights(self, x: Tensor) -> Tensor:
        return self._attend(x)[1]

    def _attend(self, x: Tensor) -> tuple[Tensor, Tensor]:
        *lead, length, d = x.shape
        h = self._heads
        dh = d // h
        qkv = nx.linear(nx.layer_norm(x, self.norm1_gamma, self.norm1_beta), self.qkv_w, self.qkv_b)
        qkv = nx.reshape(qkv, tuple(lead) + (length, 3, h, dh))
        n = len(lead)
        # -> [3, ..., heads, L, dh]
        qkv = nx.transpose(qkv, (n + 1,) + tuple(range(n)) + (n + 2, n, n + 3))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = nx.matmul(q, nx.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        attn = nx.softmax(scores, axis=-1)
        ctx = nx.matmul(attn, v)  # [..., heads, L, dh]
        ctx = nx.transpose(ctx, tuple(range(n)) + (n + 1, n, n + 2))
        return nx.reshape(ctx, tuple(lead) + (length, d)), attn

    def __call__(self, x: Tensor) -> Tensor:
        ctx, _ = self._attend(x)
        x = x + nx.linear(ctx, self.proj_w, self.proj_b)
        h = nx.layer_norm(x, self.norm2_gamma, self.norm2_beta)
        return x + nx.linear(nx.gelu(nx.linear(h, self.fc1_w, self.fc1_b)), self.fc2_w, self.fc2_b)


class ViTEncoder(Module):
    def __init__(self, d_model: int, depth: int, heads: int, mlp_ratio: int, init: Initializer):
        self.blocks = [ViTBlock(d_model, heads, mlp_ratio, init) for _ in range(depth)]
        self.norm_gamma = init.ones((d_model,))
        self.norm_beta = init.zeros((d_model,))

    def __call__(self, tokens: Tensor) -> Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        return nx.layer_norm(tokens, self.norm_gamma, self.norm_beta)


class VimEncoder(Module):
    """Stack of bidirectional SSM blocks over raster-ordered patch tokens."""

    def __init__(self, d_model: int, depth: int, d_state: int, expand: int, conv_kernel: int,
                 init: Initializer):
        self.blocks = [VimBlockParams(d_model, d_state, expand, conv_kernel, init)
                       for _ in range(depth)]
        self.norm_gamma = init.ones((d_model,))
        self.norm_beta = init.zeros((d_model,))
        self.chunk: int | None = None

    def __call__(self, tokens: Tensor) -> Tensor:
        for block in self.blocks:
            tokens = block(tokens, self.chunk)
        return nx.layer_norm(tokens, self.norm_gamma, self.norm_beta)


def tokens_to_map(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """[..., L, d] -> [..., d, gh, gw]."""
    *lead, length, d = tokens.shape
    gh, gw = grid
    if gh * gw != length:
        raise ShapeError(f"decoder: {length} tokens do not form a {gh}x{gw} patch grid")
    x = nx.reshape(tokens, tuple(lead) + (gh, gw, d))
    n = len(lead)
    return nx.transpose(x, tuple(range(n)) + (n + 2, n, n + 1))
