"""Model registry: the segmentation grid (3 decoders x 4 encoders x frozen
flag) and the 2-way classifier used for activation-map comparisons.

Checkpoints are self-describing: a torch archive holding the config as JSON
alongside the weight blobs, so a file can be rebuilt without outside
context. ``chexnet`` shares the densenet121 topology and expects an external
weight file; without one it falls back to random initialization and the
fallback is recorded in the handle's provenance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .decoders import DECODER_CHANNELS, DECODER_FAMILIES, build_decoder
from .encoders import ENCODER_FAMILIES, build_encoder

CHECKPOINT_FORMAT_VERSION = 1

DECODERS = tuple(sorted(DECODER_FAMILIES))
ENCODERS = tuple(sorted(ENCODER_FAMILIES))
SCALES = ("paper", "desk")


@dataclass(frozen=True)
class ModelConfig:
    """One cell of the experiment grid."""

    decoder: str = "unet"
    encoder: str = "densenet121"
    encoder_frozen: bool = False
    input_size: int = 224
    scale: str = "paper"
    pretrained: str | None = None

    def __post_init__(self):
        if self.decoder not in DECODER_FAMILIES:
            raise ValueError(f"unknown decoder {self.decoder!r}; options: {DECODERS}")
        if self.encoder not in ENCODER_FAMILIES:
            raise ValueError(f"unknown encoder {self.encoder!r}; options: {ENCODERS}")
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}; options: {SCALES}")
        factor = self.downsample_factor
        if self.input_size % factor != 0 or self.input_size < factor:
            raise ValueError(
                f"input_size {self.input_size} not divisible by the encoder's "
                f"downsampling factor {factor}"
            )

    @property
    def n_stages(self) -> int:
        return len(DECODER_CHANNELS[self.scale])

    @property
    def downsample_factor(self) -> int:
        return 2**self.n_stages


class SegmentationNet(nn.Module):
    """Encoder-decoder with a terminal sigmoid producing per-pixel probs."""

    def __init__(self, encoder, decoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, x):
        return torch.sigmoid(self.decoder(self.encoder(x)))


class ClassifierNet(nn.Module):
    """Encoder, global average pooling, and a 2-way output layer."""

    def __init__(self, encoder, n_classes=2):
        super().__init__()
        self.encoder = encoder
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(encoder.out_channels[-1], n_classes)

    def forward(self, x):
        feats = self.encoder(x)
        pooled = self.pool(feats[-1]).flatten(1)
        return self.fc(pooled)


@dataclass
class ModelHandle:
    module: nn.Module
    config: ModelConfig
    head: str  # segmentation_sigmoid | classifier_2way
    provenance: list = field(default_factory=list)
    last_inference_ms: float | None = None


def _load_pretrained_encoder(encoder: nn.Module, config: ModelConfig, provenance: list):
    if config.pretrained is None:
        if config.encoder == "chexnet":
            provenance.append(
                "chexnet: no weight file supplied; densenet121 topology with random init"
            )
        return
    path = Path(config.pretrained)
    if not path.exists():
        raise FileNotFoundError(
            f"pretrained weight file for encoder {config.encoder!r} not found: {path}"
        )
    state = torch.load(path, map_location="cpu", weights_only=True)
    encoder.load_state_dict(state)
    provenance.append(f"{config.encoder}: encoder weights loaded from {path}")


def build_segmentation_model(config: ModelConfig, seed: int | None = None) -> ModelHandle:
    """Build a segmentation network for a grid cell.

    Weight initialization consumes torch's global RNG; pass ``seed`` for a
    reproducible build.
    """
    if seed is not None:
        torch.manual_seed(seed)
    provenance = [f"decoder {config.decoder}: iterative-aggregation variant"
                  if config.decoder == "dla" else f"decoder {config.decoder}"]
    encoder = build_encoder(config.encoder, config.scale)
    _load_pretrained_encoder(encoder, config, provenance)
    decoder = build_decoder(config.decoder, encoder.out_channels, config.scale)
    module = SegmentationNet(encoder, decoder)
    handle = ModelHandle(module=module, config=config, head="segmentation_sigmoid",
                         provenance=provenance)
    set_encoder_frozen(handle, config.encoder_frozen)
    return handle


def build_classifier(encoder: str, pretrained: str | None = None, scale: str = "paper",
                     input_size: int | None = None, seed: int | None = None) -> ModelHandle:
    """Build the 2-way classifier on the requested encoder."""
    if seed is not None:
        torch.manual_seed(seed)
    n_stages = len(DECODER_CHANNELS[scale])
    if input_size is None:
        input_size = 224 if scale == "paper" else 64
    config = ModelConfig(decoder="unet", encoder=encoder, encoder_frozen=False,
                         input_size=input_size, scale=scale, pretrained=pretrained)
    provenance = []
    enc = build_encoder(encoder, scale)
    _load_pretrained_encoder(enc, config, provenance)
    module = ClassifierNet(enc)
    return ModelHandle(module=module, config=config, head="classifier_2way",
                       provenance=provenance)


def set_encoder_frozen(handle: ModelHandle, frozen: bool) -> ModelHandle:
    """Include/exclude encoder parameters from gradient updates."""
    for p in handle.module.encoder.parameters():
        p.requires_grad = not frozen
    handle.config = ModelConfig(**{**asdict(handle.config), "encoder_frozen": frozen})
    return handle


def count_params(handle: ModelHandle) -> tuple[int, int]:
    """(trainable, non_trainable) parameter counts."""
    trainable = sum(p.numel() for p in handle.module.parameters() if p.requires_grad)
    frozen = sum(p.numel() for p in handle.module.parameters() if not p.requires_grad)
    return trainable, frozen


def conv_layer_names(module: nn.Module) -> list:
    return [name for name, m in module.named_modules() if isinstance(m, nn.Conv2d)]


def default_cam_layer(module: nn.Module) -> str:
    """Name of the encoder's last feature-producing stage (the Grad-CAM
    default target: its output is the deepest convolutional feature map)."""
    enc = module.encoder if hasattr(module, "encoder") else module
    if not hasattr(enc, "cam_layer"):
        raise ValueError("model encoder does not expose a cam_layer")
    return ("encoder." if hasattr(module, "encoder") else "") + enc.cam_layer


def save_checkpoint(handle: ModelHandle, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config_json": json.dumps(asdict(handle.config), sort_keys=True),
        "head": handle.head,
        "provenance": list(handle.provenance),
        "state_dict": handle.module.state_dict(),
    }
    torch.save(payload, path)
    return str(path)


def load_checkpoint(path) -> ModelHandle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    cfg = json.loads(payload["config_json"])
    cfg.pop("pretrained", None)  # weights come from the checkpoint itself
    config = ModelConfig(**cfg, pretrained=None)
    if payload["head"] == "segmentation_sigmoid":
        handle = build_segmentation_model(config)
    else:
        handle = build_classifier(config.encoder, scale=config.scale,
                                  input_size=config.input_size)
    handle.module.load_state_dict(payload["state_dict"])
    handle.provenance = list(payload.get("provenance", []))
    if payload["head"] == "segmentation_sigmoid":
        set_encoder_frozen(handle, config.encoder_frozen)
    return handle
