"""Gradient-weighted class activation maps from the 2-way classifier.

Channel weights are the spatially pooled gradients of the pre-softmax class
score with respect to a convolutional feature map; the map is the ReLU of
the weighted channel sum, bilinearly resized to the input and divided by its
maximum (zero maps stay zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .imageops import resize_bilinear
from .metrics import map_overlap_stats
from .segmodel import ModelHandle, conv_layer_names, default_cam_layer


@dataclass
class ActivationMap:
    image_id: str
    class_index: int
    values: np.ndarray  # max-normalized, in [0,1]
    source_layer: str
    raw: np.ndarray | None = None  # pre-normalization map at feature resolution


def grad_cam(handle: ModelHandle, image, class_index: int, layer: str | None = None) -> ActivationMap:
    """Activation map of ``class_index`` for one image.

    ``layer`` names a module of the classifier (default: the encoder's last
    feature stage); its output must be a (1, K, h, w) feature map.
    """
    if handle.head != "classifier_2way":
        raise ValueError("grad_cam expects a classifier handle")
    if class_index not in (0, 1):
        raise ValueError(f"class_index must be 0 or 1, got {class_index}")
    module = handle.module
    layer = layer or default_cam_layer(module)
    modules = dict(module.named_modules())
    if layer not in modules:
        available = ["encoder." + n for n in conv_layer_names(module.encoder)]
        available.append(default_cam_layer(module))
        raise ValueError(f"unknown layer {layer!r}; available layers include: {available}")

    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float32)
    x = torch.from_numpy(pixels).reshape(1, 1, *pixels.shape)

    captured = {}

    def hook(_module, _inputs, output):
        captured["activation"] = output

    handle_hook = modules[layer].register_forward_hook(hook)
    try:
        module.eval()
        logits = module(x)
    finally:
        handle_hook.remove()
    activation = captured["activation"]
    if activation.ndim != 4:
        raise ValueError(f"layer {layer!r} output is not a 2-D feature map")

    score = logits[0, class_index]
    grads = torch.autograd.grad(score, activation)[0]
    weights = grads.mean(dim=(2, 3), keepdim=True)  # (1/Z) sum_ij dm/dA
    cam = torch.relu((weights * activation).sum(dim=1))[0].detach().numpy()

    resized = resize_bilinear(cam.astype(np.float64), *pixels.shape)
    resized = np.maximum(resized, 0.0)
    peak = resized.max()
    values = resized / peak if peak > 0 else np.zeros_like(resized)
    return ActivationMap(
        image_id=getattr(image, "id", ""),
        class_index=class_index,
        values=values,
        source_layer=layer,
        raw=cam,
    )


def compare_explanations(act: ActivationMap, prob, gt) -> dict:
    """Overlap statistics of an activation map and an infection probability
    field against the same ground truth, plus their differences."""
    act_stats = map_overlap_stats(act.values, gt)
    prob_stats = map_overlap_stats(np.asarray(getattr(prob, "pixels", prob)), gt)
    diff = {}
    for key in act_stats:
        if act_stats[key] is None or prob_stats[key] is None:
            diff[key] = None
        else:
            diff[key] = prob_stats[key] - act_stats[key]
    return {"activation": act_stats, "infection": prob_stats,
            "infection_minus_activation": diff}
