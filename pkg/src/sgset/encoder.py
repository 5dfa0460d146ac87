"""Image side of the model: a small patch backbone, a width projection, and a
transformer encoder over the resulting token grid.

The backbone is deliberately tiny: one non-overlapping patch convolution
(implemented as a reshape + linear, which is the same arithmetic), a ReLU, and
one 3x3 convolution over the patch grid. It stands in for a large pretrained
backbone, which is out of scope here; everything this package studies happens
after feature extraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Linear, LayerNorm, Mlp, MultiHeadAttention, prefix_params, sinusoidal_pe_2d
from .tensor import Tensor, cat


@dataclass
class ImageFeatures:
    """Encoded image tokens plus the positional encoding they were built with."""

    tokens: Tensor          # (bs, h*w, d)
    pe: np.ndarray          # (h*w, d), fixed sinusoidal
    h: int
    w: int


class PatchBackbone:
    """Patchify conv (stride = patch size) + ReLU + one 3x3 conv, zero-padded."""

    def __init__(self, patch: int, c_out: int, gen: np.random.Generator,
                 dtype=np.float32, in_channels: int = 3):
        self.patch = patch
        self.c = c_out
        self.in_channels = in_channels
        self.dtype = dtype
        self.patch_proj = Linear(in_channels * patch * patch, c_out, gen, dtype)
        self.conv3 = Linear(9 * c_out, c_out, gen, dtype)

    def __call__(self, img: Tensor) -> Tensor:
        bs, ch, h0, w0 = img.shape
        if ch != self.in_channels:
            raise ValueError(f"expected {self.in_channels}-channel images, got {ch}")
        if h0 % self.patch or w0 % self.patch:
            raise ValueError(
                f"image {h0}x{w0} not divisible by patch size {self.patch}")
        h, w = h0 // self.patch, w0 // self.patch
        p = self.patch

        x = img.reshape(bs, ch, h, p, w, p)
        x = x.transpose(0, 2, 4, 1, 3, 5).reshape(bs, h * w, ch * p * p)
        x = self.patch_proj(x).relu()          # (bs, h*w, c)
        x = x.reshape(bs, h, w, self.c)

        # 3x3 conv as nine shifted views of a zero-padded grid -> one linear.
        zrow = Tensor(np.zeros((bs, 1, w, self.c), dtype=self.dtype))
        x = cat([zrow, x, zrow], axis=1)
        zcol = Tensor(np.zeros((bs, h + 2, 1, self.c), dtype=self.dtype))
        x = cat([zcol, x, zcol], axis=2)
        shifts = [x[:, dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
        x = self.conv3(cat(shifts, axis=3))    # (bs, h, w, c)
        return x.transpose(0, 3, 1, 2)         # (bs, c, h, w)

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("patch_proj", self.patch_proj.parameters())
        out.update(prefix_params("conv3", self.conv3.parameters()))
        return out

    def n_params(self) -> int:
        return self.patch_proj.n_params() + self.conv3.n_params()


class EncoderLayer:
    """Post-norm transformer encoder layer; PE enters q and k, never v."""

    def __init__(self, d: int, heads: int, ffn: int, gen: np.random.Generator,
                 dtype=np.float32):
        self.self_attn = MultiHeadAttention(d, heads, gen, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.ffn = Mlp([d, ffn, d], gen, dtype)
        self.norm2 = LayerNorm(d, dtype)

    def __call__(self, x: Tensor, pe: np.ndarray) -> Tensor:
        q = x + pe
        x = self.norm1(x + self.self_attn(q, q, x))
        x = self.norm2(x + self.ffn(x))
        return x

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("self_attn", self.self_attn.parameters())
        out.update(prefix_params("norm1", self.norm1.parameters()))
        out.update(prefix_params("ffn", self.ffn.parameters()))
        out.update(prefix_params("norm2", self.norm2.parameters()))
        return out

    def n_params(self) -> int:
        return (self.self_attn.n_params() + self.norm1.n_params()
                + self.ffn.n_params() + self.norm2.n_params())


class ImageEncoder:
    """Backbone + 1x1 projection + encoder stack, producing ImageFeatures."""

    def __init__(self, d: int, heads: int, layers: int, ffn: int, patch: int,
                 backbone_channels: int, gen: np.random.Generator,
                 dtype=np.float32):
        if layers < 1:
            raise ValueError(f"encoder needs at least one layer, got {layers}")
        self.d = d
        self.dtype = dtype
        self.backbone = PatchBackbone(patch, backbone_channels, gen, dtype)
        self.proj = Linear(backbone_channels, d, gen, dtype)
        self.layers = [EncoderLayer(d, heads, ffn, gen, dtype) for _ in range(layers)]

    def backbone_forward(self, img: Tensor) -> Tensor:
        return self.backbone(img)

    def project_and_flatten(self, x: Tensor) -> ImageFeatures:
        bs, c, h, w = x.shape
        tokens = self.proj(x.transpose(0, 2, 3, 1).reshape(bs, h * w, c))
        pe = sinusoidal_pe_2d(h, w, self.d, self.dtype)
        return ImageFeatures(tokens=tokens, pe=pe, h=h, w=w)

    def encode(self, feat: ImageFeatures) -> ImageFeatures:
        x = feat.tokens
        for layer in self.layers:
            x = layer(x, feat.pe)
        return ImageFeatures(tokens=x, pe=feat.pe, h=feat.h, w=feat.w)

    def __call__(self, img: Tensor) -> ImageFeatures:
        return self.encode(self.project_and_flatten(self.backbone_forward(img)))

    def parameters(self) -> dict[str, Tensor]:
        out = prefix_params("backbone", self.backbone.parameters())
        out.update(prefix_params("proj", self.proj.parameters()))
        for i, layer in enumerate(self.layers):
            out.update(prefix_params(f"layers.{i}", layer.parameters()))
        return out

    def n_params(self) -> int:
        return (self.backbone.n_params() + self.proj.n_params()
                + sum(layer.n_params() for layer in self.layers))


def count_encoder_parameters(*, d: int, heads: int, enc_layers: int, ffn: int,
                             patch: int, backbone_channels: int,
                             in_channels: int = 3) -> dict[str, int]:
    """Closed-form encoder parameter counts; mirrors a built ImageEncoder."""
    del heads  # repartitions d across heads, no parameter effect
    c = backbone_channels

    def linear(d_in: int, d_out: int) -> int:
        return d_in * d_out + d_out

    layer = 4 * linear(d, d) + 2 * d + linear(d, ffn) + linear(ffn, d) + 2 * d
    counts = {
        "backbone": linear(in_channels * patch * patch, c) + linear(9 * c, c),
        "projection": linear(c, d),
        "encoder_stack": enc_layers * layer,
    }
    counts["total"] = sum(counts.values())
    return counts
