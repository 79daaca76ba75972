"""Training and evaluation loops for the segmentation grid and classifiers.

Runs are deterministic on a single device for a fixed seed: weight init is
seeded at build time, data order is reshuffled each epoch from a seed derived
as (seed, epoch), and no stochastic layers are used. Checkpoints carry the
optimizer state so a resumed run continues the same trajectory.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .infermap import ProbMask
from .losses import LossParams, Q_MIN, dice_coefficient
from .segmodel import ModelHandle, build_segmentation_model, save_checkpoint, set_encoder_frozen

DESK_MAX_BATCH = 16
CATEGORICAL = "categorical_cross_entropy"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    loss: LossParams | str = field(default_factory=LossParams)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if isinstance(self.loss, str) and self.loss != CATEGORICAL:
            raise ValueError(f"unknown loss {self.loss!r}")

    @classmethod
    def segmentation_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**{"learning_rate": 1e-4, "epochs": 50, "batch_size": 32, **overrides})

    @classmethod
    def classifier_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**{"learning_rate": 1e-5, "epochs": 10, "batch_size": 32,
                      "loss": CATEGORICAL, **overrides})

    def as_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.loss, LossParams):
            d["loss"] = asdict(self.loss)
        return d


@dataclass
class RunRecord:
    kind: str
    config: dict
    loss_history: list
    checkpoint_path: str | None
    inference_ms_per_sample: float | None
    fold_index: int | None = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "loss_history": self.loss_history,
            "checkpoint_path": self.checkpoint_path,
            "inference_ms_per_sample": self.inference_ms_per_sample,
            "fold_index": self.fold_index,
            "notes": self.notes,
        }

    def write(self, path) -> str:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True))
        return str(path)


class TorchHybridLoss(nn.Module):
    """Torch mirror of ``cxrinf.losses.hybrid_loss``: mean focal over all
    pixels plus per-image dice loss averaged over the batch."""

    def __init__(self, params: LossParams | None = None):
        super().__init__()
        self.params = params or LossParams()

    def forward(self, pred, target):
        p = self.params
        q = pred.clamp(Q_MIN, 1.0 - Q_MIN)
        focal = -p.alpha * (1 - q) ** p.gamma * target * torch.log(q) - (
            1 - p.alpha
        ) * q**p.gamma * (1 - target) * torch.log(1 - q)
        dims = tuple(range(1, pred.ndim))
        num = 2.0 * (pred * target).sum(dim=dims) + p.epsilon
        den = pred.sum(dim=dims) + target.sum(dim=dims) + p.epsilon
        dice = 1.0 - num / den
        return focal.mean() + dice.mean()


def _to_tensors(train_set, need_masks: bool):
    images, masks, labels = [], [], []
    for item in train_set:
        image, mask = item if isinstance(item, tuple) else (item, None)
        images.append(np.asarray(image.pixels, dtype=np.float32))
        labels.append(1 if image.label == "covid" else 0)
        if need_masks:
            if mask is None:
                raise ValueError(f"sample {image.id!r} has no mask")
            if mask.pixels.shape != image.pixels.shape:
                raise ValueError(f"mask misaligned for sample {image.id!r}")
            masks.append(mask.pixels.astype(np.float32))
    x = torch.from_numpy(np.stack(images)).unsqueeze(1)
    y = torch.from_numpy(np.stack(masks)).unsqueeze(1) if need_masks else None
    lbl = torch.tensor(labels, dtype=torch.long)
    return x, y, lbl


def _effective_batch(config: TrainConfig, handle: ModelHandle, n: int, notes: list) -> int:
    batch = min(config.batch_size, n)
    if handle.config.scale == "desk" and batch > DESK_MAX_BATCH:
        notes.append(f"batch size reduced {batch} -> {DESK_MAX_BATCH} at desk scale")
        batch = DESK_MAX_BATCH
    return batch


def _train_loop(handle, x, targets, loss_fn, config, out_dir, resume_from, kind):
    module = handle.module
    n = x.shape[0]
    notes = []
    batch = _effective_batch(config, handle, n, notes)
    trainable = [p for p in module.parameters() if p.requires_grad]
    if not trainable:
        raise ValueError("model has no trainable parameters")
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate,
                                 betas=(config.beta1, config.beta2))
    start_epoch = 0
    history = []
    if resume_from is not None:
        state = torch.load(resume_from, map_location="cpu", weights_only=False)
        module.load_state_dict(state["state_dict"])
        optimizer.load_state_dict(state["optimizer_state"])
        start_epoch = state["epochs_completed"]
        history = list(state.get("loss_history", []))

    torch.manual_seed(config.seed)
    for epoch in range(start_epoch, start_epoch + config.epochs):
        module.train()
        if handle.config.encoder_frozen:
            module.encoder.eval()  # keep BN statistics of a frozen encoder fixed
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        epoch_losses = []
        for lo in range(0, n, batch):
            idx = torch.from_numpy(order[lo : lo + batch].copy())
            optimizer.zero_grad()
            out = module(x[idx])
            loss = loss_fn(out, targets[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {lo // batch}"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.item()))
        history.append(float(np.mean(epoch_losses)))

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = str(out_dir / "checkpoint.pt")
        save_checkpoint(handle, checkpoint_path)
        # resume payload sits next to the plain checkpoint
        torch.save(
            {
                "state_dict": module.state_dict(),
                "optimizer_state": optimizer.state_dict(),
                "epochs_completed": start_epoch + config.epochs,
                "loss_history": history,
            },
            out_dir / "resume.pt",
        )
    ms = time_inference(handle, x[: min(n, 8)])
    record = RunRecord(
        kind=kind,
        config={"model": asdict(handle.config), "train": config.as_dict()},
        loss_history=history,
        checkpoint_path=checkpoint_path,
        inference_ms_per_sample=ms,
        notes=notes,
    )
    if out_dir is not None:
        record.write(Path(out_dir) / "runrecord.json")
    return record


def train_segmentation(handle: ModelHandle, train_set, config: TrainConfig,
                       out_dir=None, resume_from=None) -> RunRecord:
    """Train a segmentation model on (CxrImage, SegMask) pairs."""
    if handle.head != "segmentation_sigmoid":
        raise ValueError("model does not have a segmentation head")
    train_set = list(train_set)
    if not train_set:
        raise ValueError("empty training set")
    if isinstance(config.loss, str):
        raise ValueError("segmentation training needs LossParams, not categorical loss")
    x, y, _ = _to_tensors(train_set, need_masks=True)
    if x.shape[-1] != handle.config.input_size:
        raise ValueError(
            f"samples are {x.shape[-1]}px but model expects {handle.config.input_size}px"
        )
    loss_fn = TorchHybridLoss(config.loss)
    return _train_loop(handle, x, y, loss_fn, config, out_dir, resume_from,
                       kind="segmentation")


def train_classifier(handle: ModelHandle, train_set, config: TrainConfig,
                     out_dir=None, resume_from=None) -> RunRecord:
    """Fine-tune the 2-way classifier with categorical cross-entropy."""
    if handle.head != "classifier_2way":
        raise ValueError("model does not have a classifier head")
    train_set = list(train_set)
    if not train_set:
        raise ValueError("empty training set")
    x, _, labels = _to_tensors(train_set, need_masks=False)
    loss_fn = nn.CrossEntropyLoss()
    return _train_loop(handle, x, labels, loss_fn, config, out_dir, resume_from,
                       kind="classifier")


def predict(handle: ModelHandle, image):
    """ProbMask for a segmentation head; softmax class scores otherwise."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float32)
    if pixels.shape[-1] != handle.config.input_size:
        raise ValueError(
            f"image is {pixels.shape[-1]}px but model expects {handle.config.input_size}px"
        )
    x = torch.from_numpy(pixels).reshape(1, 1, *pixels.shape)
    handle.module.eval()
    start = time.perf_counter()
    with torch.no_grad():
        out = handle.module(x)
    handle.last_inference_ms = (time.perf_counter() - start) * 1000.0
    if handle.head == "segmentation_sigmoid":
        probs = out[0, 0].numpy().astype(np.float64)
        return ProbMask(image_id=getattr(image, "id", ""), pixels=np.clip(probs, 0.0, 1.0))
    return torch.softmax(out, dim=1)[0].numpy()


def time_inference(handle: ModelHandle, x: torch.Tensor, repeats: int = 1) -> float:
    """Wall-clock milliseconds per sample over a prepared batch."""
    handle.module.eval()
    with torch.no_grad():
        handle.module(x[:1])  # warm up
        start = time.perf_counter()
        for _ in range(repeats):
            for i in range(x.shape[0]):
                handle.module(x[i : i + 1])
        elapsed = time.perf_counter() - start
    return elapsed * 1000.0 / (x.shape[0] * repeats)


def training_dice(handle: ModelHandle, train_set, threshold: float = 0.5) -> float:
    """Mean dice coefficient of thresholded predictions over a sample list."""
    scores = []
    for image, mask in train_set:
        prob = predict(handle, image)
        pred = (prob.pixels >= threshold).astype(np.uint8)
        scores.append(dice_coefficient(mask.pixels, pred))
    return float(np.mean(scores))


def classifier_accuracy(handle: ModelHandle, samples) -> float:
    correct = 0
    for item in samples:
        image = item[0] if isinstance(item, tuple) else item
        scores = predict(handle, image)
        pred = int(np.argmax(scores))
        correct += int(pred == (1 if image.label == "covid" else 0))
    return correct / len(samples)


def run_cross_validation(plan, model_config, train_config: TrainConfig, samples,
                         out_dir=None, build_seed: int = 0):
    """Train one model per fold and predict every test sample exactly once.

    ``samples`` maps image id to (CxrImage, SegMask); every id in the plan
    must be present. Returns (records, predictions: id -> ProbMask).
    """
    samples = dict(samples)
    missing = [i for i in plan.assignments if i not in samples]
    if missing:
        raise ValueError(f"plan ids missing from samples: {missing[:5]}")
    records, predictions = [], {}
    for fold in range(plan.k):
        handle = build_segmentation_model(model_config, seed=build_seed + fold)
        train_ids = plan.train_ids(fold)
        fold_dir = Path(out_dir) / f"fold{fold}" if out_dir is not None else None
        record = train_segmentation(handle, [samples[i] for i in train_ids],
                                    train_config, out_dir=fold_dir)
        record.fold_index = fold
        records.append(record)
        for test_id in plan.test_ids(fold):
            if test_id in predictions:
                raise RuntimeError(f"sample {test_id!r} predicted twice")
            predictions[test_id] = predict(handle, samples[test_id][0])
    return records, predictions
