"""Decoder families on top of the encoder feature pyramids.

Three skip-connection styles: plain concatenation (unet), nested dense skip
grid (unetpp), and an iterative aggregation chain with learned merge nodes
(dla). All decoders emit a 1-channel logit map at input resolution.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoders import conv_bn_relu

DECODER_CHANNELS = {
    "paper": (256, 128, 64, 32, 16),
    "desk": (16, 8, 8),
}


def _up():
    return nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)


class _DoubleConv(nn.Sequential):
    def __init__(self, in_ch, out_ch):
        super().__init__(conv_bn_relu(in_ch, out_ch), conv_bn_relu(out_ch, out_ch))


class _MergeNode(nn.Sequential):
    """Aggregation node: 1x1 channel fusion followed by a 3x3 refinement."""

    def __init__(self, in_ch, out_ch):
        super().__init__(conv_bn_relu(in_ch, out_ch, kernel=1), conv_bn_relu(out_ch, out_ch))


class UNetDecoder(nn.Module):
    def __init__(self, enc_channels, dec_channels):
        super().__init__()
        n = len(enc_channels)
        if len(dec_channels) != n:
            raise ValueError("decoder channel list must match encoder stage count")
        self.up = _up()
        blocks = []
        ch = enc_channels[-1]
        for i in range(n - 1):
            skip_ch = enc_channels[n - 2 - i]
            blocks.append(_DoubleConv(ch + skip_ch, dec_channels[i]))
            ch = dec_channels[i]
        self.blocks = nn.ModuleList(blocks)
        self.final = _DoubleConv(ch, dec_channels[-1])
        self.head = nn.Conv2d(dec_channels[-1], 1, 1)

    def forward(self, feats):
        x = feats[-1]
        for i, block in enumerate(self.blocks):
            x = block(torch.cat([self.up(x), feats[len(feats) - 2 - i]], dim=1))
        x = self.final(self.up(x))
        return self.head(x)


class UNetPPDecoder(nn.Module):
    """Nested dense skip grid: node (i, j) fuses all previous nodes in its
    row with the upsampled node from the row below."""

    def __init__(self, enc_channels, dec_channels):
        super().__init__()
        n = len(enc_channels)
        if len(dec_channels) != n:
            raise ValueError("decoder channel list must match encoder stage count")
        self.n = n
        self.up = _up()
        # row i sits at stride 2^(i+1); row widths reuse the decoder widths
        # shallow-to-deep so row 0 is the cheapest.
        row_width = [dec_channels[n - 2 - i] if i < n - 1 else enc_channels[-1] for i in range(n)]
        self.nodes = nn.ModuleDict()
        width = {}
        for i in range(n):
            width[(i, 0)] = enc_channels[i]
        for j in range(1, n):
            for i in range(n - j):
                in_ch = sum(width[(i, k)] for k in range(j)) + width[(i + 1, j - 1)]
                self.nodes[f"x_{i}_{j}"] = _DoubleConv(in_ch, row_width[i])
                width[(i, j)] = row_width[i]
        self.final = _DoubleConv(row_width[0], dec_channels[-1])
        self.head = nn.Conv2d(dec_channels[-1], 1, 1)

    def forward(self, feats):
        grid = {(i, 0): feats[i] for i in range(self.n)}
        for j in range(1, self.n):
            for i in range(self.n - j):
                parts = [grid[(i, k)] for k in range(j)]
                parts.append(self.up(grid[(i + 1, j - 1)]))
                grid[(i, j)] = self.nodes[f"x_{i}_{j}"](torch.cat(parts, dim=1))
        x = self.final(self.up(grid[(0, self.n - 1)]))
        return self.head(x)


class DLADecoder(nn.Module):
    """Iterative deep aggregation: starting from the deepest stage, merge
    progressively shallower stages through learned merge nodes."""

    def __init__(self, enc_channels, dec_channels):
        super().__init__()
        n = len(enc_channels)
        if len(dec_channels) != n:
            raise ValueError("decoder channel list must match encoder stage count")
        self.up = _up()
        nodes = []
        ch = enc_channels[-1]
        for i in range(n - 1):
            skip_ch = enc_channels[n - 2 - i]
            nodes.append(_MergeNode(ch + skip_ch, dec_channels[i]))
            ch = dec_channels[i]
        self.nodes = nn.ModuleList(nodes)
        self.final = _MergeNode(ch, dec_channels[-1])
        self.head = nn.Conv2d(dec_channels[-1], 1, 1)

    def forward(self, feats):
        agg = feats[-1]
        for i, node in enumerate(self.nodes):
            agg = node(torch.cat([self.up(agg), feats[len(feats) - 2 - i]], dim=1))
        agg = self.final(self.up(agg))
        return self.head(agg)


DECODER_FAMILIES = {
    "unet": UNetDecoder,
    "unetpp": UNetPPDecoder,
    "dla": DLADecoder,
}


def build_decoder(name: str, enc_channels, scale: str) -> nn.Module:
    if name not in DECODER_FAMILIES:
        raise ValueError(f"unknown decoder {name!r}; options: {sorted(DECODER_FAMILIES)}")
    dec_channels = DECODER_CHANNELS[scale]
    if len(dec_channels) != len(enc_channels):
        raise ValueError(
            f"{scale} decoder expects {len(dec_channels)} encoder stages, got {len(enc_channels)}"
        )
    return DECODER_FAMILIES[name](enc_channels, dec_channels)
