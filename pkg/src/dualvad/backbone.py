"""Dual-stream encoder with per-level motion-to-appearance fusion, memory, and decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .astfm import ASTFM, ConcatFusion
from .memory import MemoryBank

LEVELS = 3


@dataclass
class NetworkConfig:
    channels: tuple = (64, 128, 256)
    bottleneck: int = 512
    clip_length: int = 4
    memory_items: int = 10
    memory_seed: int = 0
    reduction: int = 8
    skip_connections: bool = True
    # channel attention gate multiplies x instead of g(x)
    gate_input: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != LEVELS:
            raise ValueError(f"expected {LEVELS} encoder levels, got channels {self.channels}")
        for c in self.channels:
            if c % self.reduction:
                raise ValueError(f"reduction ratio {self.reduction} must divide channel count {c}")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class ModelVariant:
    use_motion_stream: bool = True
    use_interaction: bool = True
    use_astfm: bool = True
    use_memory: bool = True

    def __post_init__(self):
        if self.use_interaction and not self.use_motion_stream:
            raise ValueError("interaction requires the motion stream")
        if self.use_astfm and not self.use_interaction:
            raise ValueError("ASTFM is an interaction path; enable use_interaction")

    @classmethod
    def named(cls, name: str) -> "ModelVariant":
        try:
            return cls(**VARIANTS[name.upper()])
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None

    def to_dict(self):
        return asdict(self)


# Ablation table rows: single stream / separate streams / concat fusion / no memory / full
VARIANTS = {
    "A": dict(use_motion_stream=False, use_interaction=False, use_astfm=False, use_memory=True),
    "B": dict(use_motion_stream=True, use_interaction=False, use_astfm=False, use_memory=True),
    "C": dict(use_motion_stream=True, use_interaction=True, use_astfm=False, use_memory=True),
    "D": dict(use_motion_stream=True, use_interaction=True, use_astfm=True, use_memory=False),
    "E": dict(use_motion_stream=True, use_interaction=True, use_astfm=True, use_memory=True),
}


class ConvBlock(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


def downsample(cin, cout):
    return nn.Conv2d(cin, cout, 3, stride=2, padding=1)


class Encoding(NamedTuple):
    bottleneck: torch.Tensor
    skips: list
    attention: list  # per-level fusion weights, None where not computed
    appearance_bottleneck: torch.Tensor
    motion_bottleneck: Optional[torch.Tensor]


class ModelOutput(NamedTuple):
    prediction: torch.Tensor  # [B, 3, H, W]
    query: torch.Tensor  # bottleneck y, [B, C, H/8, W/8]
    read: Optional[torch.Tensor]  # y_hat, same shape as query
    weights: Optional[torch.Tensor]  # [B, H*W/64, N]
    attention: list


class Encoder(nn.Module):
    def __init__(self, cfg: NetworkConfig, variant: ModelVariant):
        super().__init__()
        t = cfg.clip_length
        c = list(cfg.channels)
        nxt = c[1:] + c[-1:]
        self.variant = variant
        self.app_stem = ConvBlock(3 * t, c[0])
        self.app_blocks = nn.ModuleList(ConvBlock(ci, ci) for ci in c)
        self.app_downs = nn.ModuleList(downsample(ci, co) for ci, co in zip(c, nxt))
        self.app_bottleneck = ConvBlock(c[-1], cfg.bottleneck)
        if variant.use_motion_stream:
            separate = not variant.use_interaction
            # motion only needs to reach level 3 when it feeds the fusions
            self.mot_blocks = nn.ModuleList([ConvBlock(2 * t, c[0])] +
                                            [ConvBlock(ci, ci) for ci in c[1:]])
            self.mot_downs = nn.ModuleList(downsample(ci, co) for ci, co in zip(c[:-1], c[1:]))
            if separate:
                self.mot_downs.append(downsample(c[-1], c[-1]))
                self.mot_bottleneck = ConvBlock(c[-1], cfg.bottleneck)
                self.merge = nn.Conv2d(2 * cfg.bottleneck, cfg.bottleneck, 1)
        if variant.use_interaction:
            if variant.use_astfm:
                self.fusions = nn.ModuleList(
                    ASTFM(ci, cfg.reduction, cfg.gate_input, level=l + 1) for l, ci in enumerate(c))
            else:
                self.fusions = nn.ModuleList(ConcatFusion(ci, level=l + 1) for l, ci in enumerate(c))

    def forward(self, frames, flow=None) -> Encoding:
        v = self.variant
        a = self.app_stem(frames.flatten(1, 2))
        m = None
        if v.use_motion_stream:
            if flow is None:
                raise ValueError("this variant needs flow input")
            m = self.mot_blocks[0](flow.flatten(1, 2))
        skips, attention = [], []
        for level in range(LEVELS):
            w = None
            if v.use_interaction:
                a, w = self.fusions[level](a, m)
            skips.append(a)
            attention.append(w)
            a = self.app_downs[level](self.app_blocks[level](a))
            if m is not None and level + 1 < LEVELS:
                m = self.mot_blocks[level + 1](self.mot_downs[level](m))
        app_b = self.app_bottleneck(a)
        mot_b = None
        if v.use_motion_stream and not v.use_interaction:
            mot_b = self.mot_bottleneck(self.mot_downs[-1](m))
            bottleneck = self.merge(torch.cat([app_b, mot_b], dim=1))
        else:
            bottleneck = app_b
        return Encoding(bottleneck, skips, attention, app_b, mot_b)


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig, in_channels: int):
        super().__init__()
        c1, c2, c3 = cfg.channels
        s = cfg.skip_connections
        self.in_channels = in_channels
        self.skip_connections = s
        self.entry = ConvBlock(in_channels, c3)
        self.ups = nn.ModuleList([
            ConvBlock(c3 + c3 * s, c2),
            ConvBlock(c2 + c2 * s, c1),
            ConvBlock(c1 + c1 * s, c1),
        ])
        self.out = nn.Conv2d(c1, 3, 3, padding=1)

    def forward(self, x, skips):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"decoder expects {self.in_channels} channels, got {x.shape[1]}")
        x = self.entry(x)
        for block, skip in zip(self.ups, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            if self.skip_connections:
                x = torch.cat([x, skip], dim=1)
            x = block(x)
        return torch.tanh(self.out(x))


class DualStreamPredictor(nn.Module):
    """Predict frame t+1 from ``T`` frames and their flow.

    ``frames`` is ``[B, T, 3, H, W]`` and ``flow`` ``[B, T, 2, H, W]``
    (already scaled into [-1, 1]); H and W must be divisible by 8.
    """

    def __init__(self, cfg: Optional[NetworkConfig] = None, variant: Optional[ModelVariant] = None):
        super().__init__()
        self.cfg = cfg = cfg or NetworkConfig()
        self.variant = variant = variant or ModelVariant()
        self.encoder = Encoder(cfg, variant)
        self.memory = MemoryBank(cfg.memory_items, cfg.bottleneck, cfg.memory_seed) if variant.use_memory else None
        self.decoder = Decoder(cfg, 2 * cfg.bottleneck if variant.use_memory else cfg.bottleneck)

    def check_inputs(self, frames, flow):
        if frames.ndim != 5 or frames.shape[1:3] != (self.cfg.clip_length, 3):
            raise ValueError(f"frames must be [B, {self.cfg.clip_length}, 3, H, W], got {tuple(frames.shape)}")
        h, w = frames.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 8")
        if self.variant.use_motion_stream:
            if flow is None or flow.shape[:2] != frames.shape[:2] or flow.shape[2] != 2 \
                    or flow.shape[-2:] != frames.shape[-2:]:
                raise ValueError(f"flow shape {None if flow is None else tuple(flow.shape)} "
                                 f"does not align with frames {tuple(frames.shape)}")

    def encode(self, frames, flow=None) -> Encoding:
        self.check_inputs(frames, flow)
        return self.encoder(frames, flow)

    def decode(self, x, skips):
        return self.decoder(x, skips)

    def forward(self, frames, flow=None) -> ModelOutput:
        enc = self.encode(frames, flow)
        y = enc.bottleneck
        if self.memory is None:
            return ModelOutput(self.decode(y, enc.skips), y, None, None, enc.attention)
        y_hat, w = self.memory.read(y)
        pred = self.decode(torch.cat([y, y_hat], dim=1), enc.skips)
        return ModelOutput(pred, y, y_hat, w, enc.attention)
