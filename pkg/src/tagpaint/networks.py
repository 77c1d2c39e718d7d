"""Generator, discriminator, tag-feature extractor, and checkpoint I/O.

The generator is a U-Net: a convolutional encoder downsamples the line art
to 1/8 resolution, where its features are fused (by concatenation) with the
pretrained shape-tag extractor's map and the color-tag encoder's spatial
map. Three decoder blocks, each followed by x2 pixel shuffle and a skip
concatenation, bring the image back to full size. A light guide decoder
branches after the first decoder block and produces a second full-size
image, adding a short reconstruction-loss path.

The discriminator is a strided trunk with three heads: real/fake, per
color tag, per shape tag.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn

from .blocks import BlockKind, ChannelGate, DecoderBlock, count_params, decoder_block_forward

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    cvt_count: int
    cit_count: int
    image_size: int = 64
    base_channels: int = 16
    style_dim: int = 64
    block_kind: BlockKind = BlockKind.secat
    cardinality: int = 8
    reduction: int = 16

    def __post_init__(self):
        if self.image_size % 8 != 0:
            raise ValueError(f"image_size must divide by 8, got {self.image_size}")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.style_dim % self.cardinality != 0:
            raise ValueError("style_dim must divide by cardinality")
        if self.base_channels % 4 != 0:
            raise ValueError("base_channels must divide by 4")
        object.__setattr__(self, "block_kind", BlockKind(self.block_kind))
        # fusion depth bookkeeping must close exactly
        assert (self.encoder_channels + self.cit_channels
                + self.cvt_spatial_channels) == self.fusion_depth

    # fusion layout mirrors the 256+256+64 split: 4/9 encoder, 4/9 shape
    # features, 1/9 spatial color features
    @property
    def encoder_channels(self) -> int:
        return 4 * self.base_channels

    @property
    def cit_channels(self) -> int:
        return 4 * self.base_channels

    @property
    def cvt_spatial_channels(self) -> int:
        return self.base_channels

    @property
    def fusion_depth(self) -> int:
        return 9 * self.base_channels

    @property
    def fusion_spatial(self) -> int:
        return self.image_size // 8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_kind"] = self.block_kind.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        d = dict(d)
        d["block_kind"] = BlockKind(d["block_kind"])
        return NetworkConfig(**d)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Rearrange (N, r*r*C, H, W) -> (N, C, r*H, r*W).

    out[n, c, r*y+dy, r*x+dx] = in[n, c*r*r + dy*r + dx, y, x]
    """
    if x.ndim != 4:
        raise ValueError("expected NCHW input")
    n, ch, h, w = x.shape
    if ch % (r * r) != 0:
        raise ValueError(f"channels {ch} not divisible by r^2={r * r}")
    c = ch // (r * r)
    out = x.reshape(n, c, r, r, h, w)
    out = out.permute(0, 1, 4, 2, 5, 3)
    return out.reshape(n, c, h * r, w * r)


def _conv_in_relu(in_ch, out_ch, *, stride=1, kernel=3):
    pad = kernel // 2 if stride == 1 else 1
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel if stride == 1 else 4,
                  stride=stride, padding=pad),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class SEResBlock(nn.Module):
    """Residual conv block with a squeeze/excitation gate."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 reduction: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm2d(out_ch)
        self.act1 = nn.ReLU()
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(out_ch)
        self.act_out = nn.ReLU()
        self.gate = ChannelGate(out_ch, 0, reduction)
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride)

    def forward(self, x):
        sc = self.shortcut(x) if self.shortcut is not None else x
        h = self.act1(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        g = self.gate(h.mean(dim=(2, 3)))
        return self.act_out(h * g[:, :, None, None] + sc)


class CitTrunk(nn.Module):
    """Shape-tag feature trunk: line art -> non-negative map at 1/8 scale."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        b = config.base_channels
        self.stem = _conv_in_relu(1, b)
        self.stage1 = SEResBlock(b, 2 * b, stride=2, reduction=config.reduction)
        self.stage2 = SEResBlock(2 * b, 4 * b, stride=2, reduction=config.reduction)
        self.stage3 = SEResBlock(4 * b, config.cit_channels, stride=2,
                                 reduction=config.reduction)
        # persists through checkpoints; lets consumers warn on raw weights
        self.register_buffer("pretrained_flag", torch.zeros(1))

    @property
    def pretrained(self) -> bool:
        return bool(self.pretrained_flag.item() > 0)

    def mark_pretrained(self) -> None:
        self.pretrained_flag.fill_(1.0)

    def forward(self, line_art: torch.Tensor) -> torch.Tensor:
        x = line_art * 2.0 - 1.0
        return self.stage3(self.stage2(self.stage1(self.stem(x))))


class CitExtractor(nn.Module):
    """Multi-label shape-tag classifier; its trunk feeds the generator."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        b = config.base_channels
        self.config = config
        self.trunk = CitTrunk(config)
        self.stage4 = SEResBlock(config.cit_channels, 8 * b, stride=2,
                                 reduction=config.reduction)
        self.head = nn.Linear(8 * b, config.cit_count)

    def forward(self, line_art: torch.Tensor) -> torch.Tensor:
        h = self.stage4(self.trunk(line_art))
        return self.head(h.mean(dim=(2, 3)))

    def features(self, line_art: torch.Tensor) -> torch.Tensor:
        return self.trunk(line_art)


class CvtEncoder(nn.Module):
    """Embed the color-tag multi-hot into a style vector and a spatial map."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        b = config.base_channels
        fs = config.fusion_spatial
        self.start = min(4, fs)
        n_up = int(math.log2(fs // self.start))
        self.style_fc = nn.Sequential(
            nn.Linear(config.cvt_count, 2 * config.style_dim),
            nn.ReLU(inplace=True),
            nn.Linear(2 * config.style_dim, config.style_dim),
        )
        self.seed_fc = nn.Sequential(
            nn.Linear(config.cvt_count, 2 * b * self.start * self.start),
            nn.ReLU(inplace=True),
        )
        ups = []
        for _ in range(n_up):
            ups += [nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(2 * b, 2 * b, 3, padding=1),
                    nn.InstanceNorm2d(2 * b),
                    nn.ReLU(inplace=True)]
        ups += [nn.Conv2d(2 * b, config.cvt_spatial_channels, 3, padding=1),
                nn.ReLU(inplace=True)]
        self.spatial_convs = nn.Sequential(*ups)
        self.base = b

    def forward(self, cvt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        style = self.style_fc(cvt)
        seed = self.seed_fc(cvt).reshape(-1, 2 * self.base, self.start, self.start)
        return self.spatial_convs(seed), style


class GeneratorOutput(NamedTuple):
    full_image: torch.Tensor   # G_f, RGB in [-1, 1]
    guide_image: torch.Tensor  # G_g, RGB in [-1, 1]


class Generator(nn.Module):
    def __init__(self, config: NetworkConfig, cit_trunk: CitTrunk):
        super().__init__()
        b = config.base_channels
        self.config = config
        self.cit_trunk = cit_trunk
        for p in self.cit_trunk.parameters():
            p.requires_grad_(False)

        self.enc0 = _conv_in_relu(1, b)
        self.enc1 = _conv_in_relu(b, 2 * b, stride=2)
        self.enc2 = _conv_in_relu(2 * b, 4 * b, stride=2)
        self.enc3 = _conv_in_relu(4 * b, config.encoder_channels, stride=2)

        self.cvt_encoder = CvtEncoder(config)

        mk = lambda in_ch, out_ch: DecoderBlock(
            in_ch, out_ch, config.block_kind, style_dim=config.style_dim,
            cardinality=config.cardinality, reduction=config.reduction)
        self.dec1 = mk(config.fusion_depth, 8 * b)
        self.dec2 = mk(2 * b + 4 * b, 8 * b)
        self.dec3 = mk(2 * b + 2 * b, 4 * b)

        self.head = nn.Sequential(
            nn.Conv2d(b + b, b, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 3, 3, padding=1),
            nn.Tanh(),
        )
        self.guide = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * b, b, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(b, b, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 3, 3, padding=1),
            nn.Tanh(),
        )

    def forward(self, line_art: torch.Tensor,
                cvt: torch.Tensor) -> GeneratorOutput:
        cfg = self.config
        if line_art.shape[-1] != cfg.image_size:
            raise ValueError(f"expected {cfg.image_size}px input, "
                             f"got {line_art.shape[-1]}")
        if cvt.shape[1] != cfg.cvt_count:
            raise ValueError(f"cvt vector length {cvt.shape[1]} != {cfg.cvt_count}")
        x = line_art * 2.0 - 1.0
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)

        cit_feat = self.cit_trunk(line_art)
        cvt_spatial, style = self.cvt_encoder(cvt)
        fusion = torch.cat([e3, cit_feat, cvt_spatial], dim=1)
        assert fusion.shape[1] == cfg.fusion_depth

        h = pixel_shuffle(self.dec1(fusion, style), 2)
        g_g = self.guide(h)
        h = pixel_shuffle(decoder_block_forward(self.dec2, h, e2, style), 2)
        h = pixel_shuffle(decoder_block_forward(self.dec3, h, e1, style), 2)
        g_f = self.head(torch.cat([h, e0], dim=1))
        return GeneratorOutput(full_image=g_f, guide_image=g_g)


class DiscriminatorOutput(NamedTuple):
    adv: torch.Tensor        # (N,) in (0,1)
    cvt_probs: torch.Tensor  # (N, cvt_count) in (0,1)
    cit_probs: torch.Tensor  # (N, cit_count) in (0,1)


class Discriminator(nn.Module):
    """Strided trunk, global pooling, and three sigmoid heads."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        b = config.base_channels
        self.config = config
        n_stages = min(5, int(math.log2(config.image_size)) - 1)
        widths = [b, 2 * b, 4 * b, 4 * b, 8 * b][:n_stages]
        layers = []
        in_ch = 3
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(in_ch, w, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(w))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = w
        self.trunk = nn.Sequential(*layers)
        self.adv_head = nn.Linear(in_ch, 1)
        self.cvt_head = nn.Linear(in_ch, config.cvt_count)
        self.cit_head = nn.Linear(in_ch, config.cit_count)

    def forward(self, color_image: torch.Tensor) -> DiscriminatorOutput:
        if color_image.shape[-1] != self.config.image_size:
            raise ValueError(f"expected {self.config.image_size}px input, "
                             f"got {color_image.shape[-1]}")
        h = self.trunk(color_image).mean(dim=(2, 3))
        return DiscriminatorOutput(
            adv=torch.sigmoid(self.adv_head(h)).squeeze(1),
            cvt_probs=torch.sigmoid(self.cvt_head(h)),
            cit_probs=torch.sigmoid(self.cit_head(h)),
        )


def build_models(config: NetworkConfig, cit_trunk: CitTrunk | None = None):
    """Fresh (generator, discriminator); trunk defaults to random weights."""
    trunk = cit_trunk if cit_trunk is not None else CitTrunk(config)
    return Generator(config, trunk), Discriminator(config)


@dataclass
class CheckpointBundle:
    checkpoint_id: str
    config: NetworkConfig
    generator: Generator
    discriminator: Discriminator | None
    vocab_sha256: str
    schedule_state: dict


def save_checkpoint(path: str | Path, generator: Generator,
                    discriminator: Discriminator | None,
                    vocab_sha256: str, schedule_state: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": generator.config.to_dict(),
        "vocab_sha256": vocab_sha256,
        "schedule_state": schedule_state or {},
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict() if discriminator else None,
        "saved_at": time.time(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, vocab_sha256: str | None = None,
                    with_discriminator: bool = True) -> CheckpointBundle:
    path = Path(path)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    if vocab_sha256 is not None and payload["vocab_sha256"] != vocab_sha256:
        raise ValueError(
            "checkpoint vocabulary hash mismatch: "
            f"{payload['vocab_sha256'][:12]}... vs {vocab_sha256[:12]}...")
    config = NetworkConfig.from_dict(payload["config"])
    generator = Generator(config, CitTrunk(config))
    generator.load_state_dict(payload["generator"])
    generator.eval()
    discriminator = None
    if with_discriminator and payload["discriminator"] is not None:
        discriminator = Discriminator(config)
        discriminator.load_state_dict(payload["discriminator"])
        discriminator.eval()
    return CheckpointBundle(checkpoint_id=path.stem, config=config,
                            generator=generator, discriminator=discriminator,
                            vocab_sha256=payload["vocab_sha256"],
                            schedule_state=payload["schedule_state"])


def generator_param_count(generator: Generator) -> int:
    """Trainable generator parameters; the frozen trunk is excluded."""
    return count_params(generator)
