"""Decoder block zoo: aggregated-residual blocks with six ways of
injecting (or not injecting) the encoded color-tag style vector.

Kinds:
  resnext       plain aggregated-residual block, style ignored
  se_resnext    + squeeze/excitation channel gate, style ignored
  concat_front  style broadcast to HxW and concatenated before the first conv
  concat_all    ... before every conv
  adain         style mapped to per-channel (scale, bias) after instance norm
  secat         channel gate fed with pooled features concatenated with style

All kinds preserve spatial size; upsampling happens outside via pixel
shuffle. A ``secat`` block built with ``style_dim=0`` is exactly an
``se_resnext`` block, which is how both share one gate implementation.
"""
from __future__ import annotations

from enum import Enum

import torch
import torch.nn as nn


class BlockKind(str, Enum):
    resnext = "resnext"
    se_resnext = "se_resnext"
    concat_front = "concat_front"
    concat_all = "concat_all"
    adain = "adain"
    secat = "secat"


STYLE_FREE_KINDS = (BlockKind.resnext, BlockKind.se_resnext)


def squeeze(features: torch.Tensor) -> torch.Tensor:
    """Global average pool a NCHW map to per-channel means, shape (N, C)."""
    if features.ndim != 4:
        raise ValueError(f"expected NCHW features, got {tuple(features.shape)}")
    return features.mean(dim=(2, 3))


class ChannelGate(nn.Module):
    """Excitation: FC bottleneck over (pooled ++ style), sigmoid scales.

    With style_dim=0 this is the plain squeeze/excitation gate.
    """

    def __init__(self, channels: int, style_dim: int, reduction: int = 16):
        super().__init__()
        self.channels = channels
        self.style_dim = style_dim
        hidden = max(1, (channels + style_dim) // reduction)
        self.fc1 = nn.Linear(channels + style_dim, hidden)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, pooled: torch.Tensor, style: torch.Tensor | None = None) -> torch.Tensor:
        if style is None or style.shape[1] == 0:
            if self.style_dim != 0:
                raise ValueError("gate was built with a style input")
            merged = pooled
        else:
            if style.shape[1] != self.style_dim:
                raise ValueError(f"style length {style.shape[1]} != {self.style_dim}")
            merged = torch.cat([pooled, style], dim=1)
        return torch.sigmoid(self.fc2(self.act(self.fc1(merged))))


def excite(gate: ChannelGate, pooled: torch.Tensor,
           style: torch.Tensor | None = None) -> torch.Tensor:
    """Per-channel scales in (0,1) from pooled features and optional style."""
    return gate(pooled, style)


def _bottleneck_width(out_ch: int, cardinality: int) -> int:
    w = max(out_ch // 2, cardinality)
    return ((w + cardinality - 1) // cardinality) * cardinality


class DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kind: BlockKind,
                 style_dim: int = 64, cardinality: int = 8,
                 reduction: int = 16):
        super().__init__()
        kind = BlockKind(kind)
        self.kind = kind
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.style_dim = style_dim
        concat_front = kind in (BlockKind.concat_front, BlockKind.concat_all)
        concat_all = kind is BlockKind.concat_all
        if concat_all and style_dim % cardinality != 0:
            raise ValueError("style_dim must divide by cardinality for concat_all")

        w = _bottleneck_width(out_ch, cardinality)
        self.conv_reduce = nn.Conv2d(in_ch + (style_dim if concat_front else 0),
                                     w, kernel_size=1)
        self.norm1 = nn.InstanceNorm2d(w)
        self.conv_group = nn.Conv2d(w + (style_dim if concat_all else 0), w,
                                    kernel_size=3, padding=1,
                                    groups=cardinality)
        self.norm2 = nn.InstanceNorm2d(w)
        self.conv_expand = nn.Conv2d(w + (style_dim if concat_all else 0),
                                     out_ch, kernel_size=1)
        self.norm3 = nn.InstanceNorm2d(out_ch)
        self.act1 = nn.ReLU()
        self.act2 = nn.ReLU()
        self.act_out = nn.ReLU()
        self.shortcut = (nn.Conv2d(in_ch, out_ch, kernel_size=1)
                         if in_ch != out_ch else None)

        self.gate = None
        self.style_affine = None
        if kind is BlockKind.se_resnext:
            self.gate = ChannelGate(out_ch, 0, reduction)
        elif kind is BlockKind.secat:
            self.gate = ChannelGate(out_ch, style_dim, reduction)
        elif kind is BlockKind.adain:
            self.style_affine = nn.Linear(style_dim, 2 * out_ch)
            with torch.no_grad():
                # identity transform at init: scale 1, bias 0
                self.style_affine.bias[:out_ch] = 1.0
                self.style_affine.bias[out_ch:] = 0.0

    def forward(self, x: torch.Tensor,
                style: torch.Tensor | None = None) -> torch.Tensor:
        needs_style = (self.kind not in STYLE_FREE_KINDS) and self.style_dim > 0
        if needs_style and style is None:
            raise ValueError(f"{self.kind.value} block requires a style vector")
        if style is not None and self.style_dim and style.shape[1] != self.style_dim:
            raise ValueError(f"style length {style.shape[1]} != {self.style_dim}")

        def broadcast(h):
            return style[:, :, None, None].expand(
                -1, -1, h.shape[2], h.shape[3])

        sc = self.shortcut(x) if self.shortcut is not None else x
        h = x
        if self.kind in (BlockKind.concat_front, BlockKind.concat_all):
            h = torch.cat([h, broadcast(h)], dim=1)
        h = self.act1(self.norm1(self.conv_reduce(h)))
        if self.kind is BlockKind.concat_all:
            h = torch.cat([h, broadcast(h)], dim=1)
        h = self.act2(self.norm2(self.conv_group(h)))
        if self.kind is BlockKind.concat_all:
            h = torch.cat([h, broadcast(h)], dim=1)
        h = self.norm3(self.conv_expand(h))
        if self.kind is BlockKind.adain:
            scale, bias = self.style_affine(style).chunk(2, dim=1)
            h = h * scale[:, :, None, None] + bias[:, :, None, None]
        elif self.gate is not None:
            gate_style = style if self.kind is BlockKind.secat else None
            if self.kind is BlockKind.secat and self.style_dim == 0:
                gate_style = None
            g = self.gate(squeeze(h), gate_style)
            h = h * g[:, :, None, None]
        return self.act_out(h + sc)


def decoder_block_forward(block: DecoderBlock, features: torch.Tensor,
                          skip_features: torch.Tensor | None,
                          style: torch.Tensor | None = None) -> torch.Tensor:
    """Concatenate decoder features with the same-resolution skip, run block."""
    h = features
    if skip_features is not None:
        if skip_features.shape[2:] != features.shape[2:]:
            raise ValueError("skip features spatial size mismatch")
        h = torch.cat([features, skip_features], dim=1)
    if h.shape[1] != block.in_ch:
        raise ValueError(f"block expects {block.in_ch} channels, got {h.shape[1]}")
    return block(h, style)


def count_params(module: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
