"""Encoder backbones producing multi-scale feature pyramids.

Every encoder maps (B, 1, H, W) to a list of feature maps, the i-th at
stride 2^(i+1). ``paper`` scale uses canonical widths/depths; ``desk`` scale
divides channel widths by 8 and caps the pyramid at 3 stages so the full
stack runs on a laptop CPU. Convolutions use replicate padding so constant
inputs stay spatially constant through the network.
"""

from __future__ import annotations

import torch
from torch import nn


def conv_bn_relu(in_ch, out_ch, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2,
                  padding_mode="replicate", bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class _DenseLayer(nn.Module):
    def __init__(self, in_ch, growth):
        super().__init__()
        inter = 4 * growth
        self.norm1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, inter, 1, bias=False)
        self.norm2 = nn.BatchNorm2d(inter)
        self.conv2 = nn.Conv2d(inter, growth, 3, padding=1, padding_mode="replicate",
                               bias=False)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.conv1(self.relu(self.norm1(x)))
        out = self.conv2(self.relu(self.norm2(out)))
        return torch.cat([x, out], dim=1)


class _DenseBlock(nn.Sequential):
    def __init__(self, in_ch, growth, n_layers):
        layers = []
        ch = in_ch
        for _ in range(n_layers):
            layers.append(_DenseLayer(ch, growth))
            ch += growth
        super().__init__(*layers)
        self.out_channels = ch


class _Transition(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.norm = nn.BatchNorm2d(in_ch)
        self.relu = nn.ReLU(inplace=True)
        self.conv = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        self.pool = nn.AvgPool2d(2, stride=2)

    def forward(self, x):
        return self.pool(self.conv(self.relu(self.norm(x))))


class DenseNetEncoder(nn.Module):
    """Densely connected encoder; ``paper`` scale is the 121-layer layout."""

    SPECS = {
        "paper": dict(init_ch=64, growth=32, blocks=(6, 12, 24, 16), stem_kernel=7),
        "desk": dict(init_ch=8, growth=4, blocks=(2, 2), stem_kernel=3),
    }

    def __init__(self, scale="paper", in_ch=1):
        super().__init__()
        spec = self.SPECS[scale]
        init_ch, growth = spec["init_ch"], spec["growth"]
        self.stem = conv_bn_relu(in_ch, init_ch, kernel=spec["stem_kernel"], stride=2)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        blocks, transitions = nn.ModuleList(), nn.ModuleList()
        ch = init_ch
        out_channels = [init_ch]
        for i, n_layers in enumerate(spec["blocks"]):
            block = _DenseBlock(ch, growth, n_layers)
            blocks.append(block)
            ch = block.out_channels
            out_channels.append(ch)
            if i < len(spec["blocks"]) - 1:
                transitions.append(_Transition(ch, ch // 2))
                ch = ch // 2
        self.blocks = blocks
        self.transitions = transitions
        self.final_norm = nn.Sequential(nn.BatchNorm2d(ch), nn.ReLU(inplace=True))
        self.out_channels = out_channels
        self.cam_layer = "final_norm"

    def forward(self, x):
        feats = []
        x = self.stem(x)
        feats.append(x)
        x = self.pool(x)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.blocks) - 1:
                feats.append(x)
                x = self.transitions[i](x)
            else:
                feats.append(self.final_norm(x))
        return feats


class _BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, planes, 3, stride=stride, padding=1,
                               padding_mode="replicate", bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, padding_mode="replicate",
                               bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, planes, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x):
        identity = self.downsample(x) if self.downsample else x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class _Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch, planes, stride=1):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = nn.Conv2d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1,
                               padding_mode="replicate", bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x):
        identity = self.downsample(x) if self.downsample else x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNetEncoder(nn.Module):
    """Residual encoder; ``paper`` scale is the 50-layer bottleneck layout."""

    SPECS = {
        "paper": dict(base=64, layers=(3, 4, 6, 3), block=_Bottleneck, stem_kernel=7),
        "desk": dict(base=8, layers=(1, 1), block=_BasicBlock, stem_kernel=3),
    }

    def __init__(self, scale="paper", in_ch=1):
        super().__init__()
        spec = self.SPECS[scale]
        base, block = spec["base"], spec["block"]
        self.stem = conv_bn_relu(in_ch, base, kernel=spec["stem_kernel"], stride=2)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        stages = nn.ModuleList()
        ch = base
        out_channels = [base]
        for i, n_blocks in enumerate(spec["layers"]):
            planes = base * 2**i
            stride = 1 if i == 0 else 2
            blocks = [block(ch, planes, stride=stride)]
            ch = planes * block.expansion
            for _ in range(n_blocks - 1):
                blocks.append(block(ch, planes))
            stages.append(nn.Sequential(*blocks))
            out_channels.append(ch)
        self.stages = stages
        self.out_channels = out_channels
        self.cam_layer = f"stages.{len(stages) - 1}"

    def forward(self, x):
        feats = []
        x = self.stem(x)
        feats.append(x)
        x = self.pool(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class _InceptionMix(nn.Module):
    """Parallel 1x1 / 5x5 / double-3x3 / pool-projection branches."""

    def __init__(self, in_ch, c1, c5, c3, cpool):
        super().__init__()
        c5r, c5o = c5
        c3r, c3o = c3
        self.branch1 = conv_bn_relu(in_ch, c1, kernel=1)
        self.branch5 = nn.Sequential(
            conv_bn_relu(in_ch, c5r, kernel=1), conv_bn_relu(c5r, c5o, kernel=5)
        )
        self.branch3 = nn.Sequential(
            conv_bn_relu(in_ch, c3r, kernel=1),
            conv_bn_relu(c3r, c3o),
            conv_bn_relu(c3o, c3o),
        )
        self.branch_pool = nn.Sequential(
            nn.AvgPool2d(3, stride=1, padding=1, count_include_pad=False),
            conv_bn_relu(in_ch, cpool, kernel=1),
        )
        self.out_channels = c1 + c5o + c3o + cpool

    def forward(self, x):
        return torch.cat(
            [self.branch1(x), self.branch5(x), self.branch3(x), self.branch_pool(x)], dim=1
        )


class _InceptionReduce(nn.Module):
    """Grid-size reduction: strided 3x3 + strided double-3x3 + maxpool."""

    def __init__(self, in_ch, c3, cd):
        super().__init__()
        cdr, cdo = cd
        self.branch3 = conv_bn_relu(in_ch, c3, stride=2)
        self.branch_d = nn.Sequential(
            conv_bn_relu(in_ch, cdr, kernel=1),
            conv_bn_relu(cdr, cdo),
            conv_bn_relu(cdo, cdo, stride=2),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.out_channels = c3 + cdo + in_ch

    def forward(self, x):
        return torch.cat([self.branch3(x), self.branch_d(x), self.pool(x)], dim=1)


class InceptionEncoder(nn.Module):
    """Factorized-convolution encoder with mixed blocks (v3-style)."""

    def __init__(self, scale="paper", in_ch=1):
        super().__init__()
        self.out_channels = []
        if scale == "paper":
            self.stem = nn.Sequential(
                conv_bn_relu(in_ch, 32, stride=2), conv_bn_relu(32, 32), conv_bn_relu(32, 64)
            )
            self.out_channels.append(64)
            self.stage1 = nn.Sequential(
                nn.MaxPool2d(3, stride=2, padding=1),
                conv_bn_relu(64, 80, kernel=1),
                conv_bn_relu(80, 192),
            )
            self.out_channels.append(192)
            mix_a = [
                _InceptionMix(192, 64, (48, 64), (64, 96), 32),
                _InceptionMix(256, 64, (48, 64), (64, 96), 64),
                _InceptionMix(288, 64, (48, 64), (64, 96), 64),
            ]
            self.stage2 = nn.Sequential(nn.MaxPool2d(3, stride=2, padding=1), *mix_a)
            self.out_channels.append(288)
            reduce_b = _InceptionReduce(288, 384, (64, 96))
            mix_b = [
                _InceptionMix(768, 192, (128, 192), (128, 192), 192),
                _InceptionMix(768, 192, (128, 192), (128, 192), 192),
            ]
            self.stage3 = nn.Sequential(reduce_b, *mix_b)
            self.out_channels.append(768)
            reduce_c = _InceptionReduce(768, 320, (128, 192))
            self.stage4 = nn.Sequential(
                reduce_c, _InceptionMix(1280, 320, (192, 320), (192, 320), 320)
            )
            self.out_channels.append(1280)
            self.stages = nn.ModuleList([self.stage1, self.stage2, self.stage3, self.stage4])
            self.cam_layer = "stages.3"
        else:
            self.stem = nn.Sequential(conv_bn_relu(in_ch, 4, stride=2), conv_bn_relu(4, 8))
            self.out_channels.append(8)
            self.stage1 = nn.Sequential(
                nn.MaxPool2d(3, stride=2, padding=1),
                conv_bn_relu(8, 10, kernel=1),
                conv_bn_relu(10, 24),
            )
            self.out_channels.append(24)
            self.stage2 = nn.Sequential(
                nn.MaxPool2d(3, stride=2, padding=1),
                _InceptionMix(24, 12, (8, 12), (8, 8), 4),
            )
            self.out_channels.append(36)
            self.stages = nn.ModuleList([self.stage1, self.stage2])
            self.cam_layer = "stages.1"

    def forward(self, x):
        feats = []
        x = self.stem(x)
        feats.append(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


ENCODER_FAMILIES = {
    "densenet121": DenseNetEncoder,
    "chexnet": DenseNetEncoder,  # same topology; weights come from a local file
    "inceptionv3": InceptionEncoder,
    "resnet50": ResNetEncoder,
}


def build_encoder(name: str, scale: str, in_ch: int = 1) -> nn.Module:
    if name not in ENCODER_FAMILIES:
        raise ValueError(f"unknown encoder {name!r}; options: {sorted(ENCODER_FAMILIES)}")
    if scale not in ("paper", "desk"):
        raise ValueError(f"unknown scale {scale!r}")
    return ENCODER_FAMILIES[name](scale=scale, in_ch=in_ch)
