"""Attention-based spatial-temporal fusion of appearance and motion features."""
import torch
import torch.nn as nn
import torch.nn.functional as F


class ChannelAttention(nn.Module):
    """Residual channel attention over motion features.

    ``out = x + g(x) * sigmoid(g(avgpool(x)))`` where ``g`` is
    ``j2(relu(j1(.)))`` built from two 1x1 convolutions whose weights are
    shared between the full-resolution and pooled branches.

    With ``gate_input=True`` the pooled gate multiplies ``x`` itself instead
    of ``g(x)`` (classical squeeze-excitation placement).
    """

    def __init__(self, channels: int, reduction: int = 8, gate_input: bool = False):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ValueError(f"reduction ratio {reduction} must divide channel count {channels}")
        self.channels = channels
        self.gate_input = gate_input
        self.j1 = nn.Conv2d(channels, channels // reduction, 1)
        self.j2 = nn.Conv2d(channels // reduction, channels, 1)

    def g(self, x):
        return self.j2(F.relu(self.j1(x)))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        gate = torch.sigmoid(self.g(x.mean(dim=(2, 3), keepdim=True)))
        if self.gate_input:
            return x + x * gate
        return x + self.g(x) * gate


class AttentionFusion(nn.Module):
    """Gate appearance features with a weight computed from both streams.

    The weight is ``sigmoid(conv2(relu(conv1(cat[x_a, x_m]))))`` with 1x1
    convolutions, one value per channel and position, so motion reaches the
    output only through the gate.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(2 * channels, channels, 1)
        self.conv2 = nn.Conv2d(channels, channels, 1)

    def attention(self, x_a, x_m):
        return torch.sigmoid(self.conv2(F.relu(self.conv1(torch.cat([x_a, x_m], dim=1)))))

    def forward(self, x_a, x_m):
        weight = self.attention(x_a, x_m)
        return x_a * weight, weight


class ASTFM(nn.Module):
    """Channel attention on the motion branch followed by attention fusion."""

    def __init__(self, channels: int, reduction: int = 8, gate_input: bool = False, level: int = 1):
        super().__init__()
        self.level = level
        self.channel_attention = ChannelAttention(channels, reduction, gate_input)
        self.fusion = AttentionFusion(channels)

    def forward(self, x_a, x_m):
        check_fusion_shapes(x_a, x_m, self.level)
        return self.fusion(x_a, self.channel_attention(x_m))


class ConcatFusion(nn.Module):
    """Plain fusion baseline: concatenate both streams, 1x1 conv back to ``channels``."""

    def __init__(self, channels: int, level: int = 1):
        super().__init__()
        self.level = level
        self.proj = nn.Conv2d(2 * channels, channels, 1)

    def forward(self, x_a, x_m):
        check_fusion_shapes(x_a, x_m, self.level)
        return self.proj(torch.cat([x_a, x_m], dim=1)), None


def check_fusion_shapes(x_a, x_m, level):
    if x_a.shape != x_m.shape:
        raise ValueError(f"fusion at level {level}: appearance {tuple(x_a.shape)} "
                         f"and motion {tuple(x_m.shape)} do not match")
