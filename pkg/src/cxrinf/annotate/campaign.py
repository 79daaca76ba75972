"""Two-stage collaborative ground-truth campaigns.

State is event-sourced: every mutation appends one JSON line to
``events.jsonl`` and rewrites ``snapshot.json``; replaying the log from an
empty state reproduces the snapshot byte-identically. Candidate masks are
stored content-addressed under ``masks/`` and referenced only by hash, so
task payloads sent to reviewers carry no provenance. Task assignment is
linearizable: a single in-process lock guards the queue.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from ..dataset import CxrImage, SegMask, make_folds
from ..imageops import sha256_bytes, write_png_gray8
from ..segmodel import ModelConfig, build_segmentation_model
from ..trainer import TrainConfig, predict, run_cross_validation, train_segmentation

REJECT_ALL = "REJECT_ALL"
DEFAULT_LOCK_SECONDS = 15 * 60
STAGE1_CANDIDATES = 4  # manual mask + three model predictions
STAGE2_CANDIDATES = 5


class AnnotationError(Exception):
    pass


class StaleLockError(AnnotationError):
    pass


class ConflictError(AnnotationError):
    pass


@dataclass
class Candidate:
    label: str
    mask_ref: str


@dataclass
class AnnotationTask:
    task_id: str
    image_id: str
    stage: str
    candidates: list
    permutation_seed: int
    status: str = "open"  # open | locked | completed | rejected_all
    lock: dict | None = None
    selection: dict | None = None

    def as_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "image_id": self.image_id,
            "stage": self.stage,
            "candidates": [asdict(c) for c in self.candidates],
            "permutation_seed": self.permutation_seed,
            "status": self.status,
            "lock": self.lock,
            "selection": self.selection,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationTask":
        return cls(
            task_id=d["task_id"],
            image_id=d["image_id"],
            stage=d["stage"],
            candidates=[Candidate(**c) for c in d["candidates"]],
            permutation_seed=d["permutation_seed"],
            status=d["status"],
            lock=d["lock"],
            selection=d["selection"],
        )


@dataclass
class Selection:
    task_id: str
    reviewer_id: str
    choice: str  # a candidate label, or REJECT_ALL
    timestamp: float = field(default_factory=time.time)


def mask_png_bytes(mask_pixels: np.ndarray) -> bytes:
    buf = BytesIO()
    Image.fromarray((mask_pixels > 0).astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(BytesIO(data)).convert("L"))
    return (arr >= 128).astype(np.uint8)


class CampaignStore:
    """Directory-backed campaign with an append-only event log."""

    def __init__(self, root, lock_seconds: float = DEFAULT_LOCK_SECONDS):
        self.root = Path(root)
        self.masks_dir = self.root / "masks"
        self.images_dir = self.root / "images"
        self.events_path = self.root / "events.jsonl"
        self.snapshot_path = self.root / "snapshot.json"
        self.lock_seconds = lock_seconds
        self._mutex = threading.Lock()
        self.state = {
            "stage": None,
            "seed": None,
            "next_seq": 0,
            "tasks": {},
            "hidden_provenance": {},
            "fallback_pending": [],
            "fallback_masks": {},
        }

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, root, stage: str, seed: int,
               lock_seconds: float = DEFAULT_LOCK_SECONDS) -> "CampaignStore":
        store = cls(root, lock_seconds=lock_seconds)
        store.root.mkdir(parents=True, exist_ok=True)
        store.masks_dir.mkdir(exist_ok=True)
        store.images_dir.mkdir(exist_ok=True)
        if store.events_path.exists():
            raise FileExistsError(f"campaign already exists at {store.root}")
        store._append_event({"type": "campaign_created", "stage": stage, "seed": seed})
        return store

    @classmethod
    def open(cls, root, lock_seconds: float = DEFAULT_LOCK_SECONDS) -> "CampaignStore":
        store = cls(root, lock_seconds=lock_seconds)
        if not store.events_path.exists():
            raise FileNotFoundError(f"no campaign at {store.root}")
        store.state = replay_events(store.read_events())
        return store

    # -- event machinery ---------------------------------------------------

    def read_events(self) -> list:
        with open(self.events_path) as f:
            return [json.loads(line) for line in f if line.strip()]

    def _append_event(self, event: dict) -> None:
        event = {"seq": self.state["next_seq"], **event}
        with open(self.events_path, "a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
        self.state = apply_event(self.state, event)
        self.snapshot_path.write_bytes(canonical_state_bytes(self.state))

    # -- mask/image stores -------------------------------------------------

    def put_mask(self, mask_pixels: np.ndarray) -> str:
        data = mask_png_bytes(mask_pixels)
        ref = sha256_bytes(data)
        path = self.masks_dir / f"{ref}.png"
        if not path.exists():
            path.write_bytes(data)
        return ref

    def get_mask(self, ref: str) -> np.ndarray:
        path = self.masks_dir / f"{ref}.png"
        if not path.exists():
            raise KeyError(f"unknown mask ref {ref!r}")
        return mask_from_png_bytes(path.read_bytes())

    def put_image(self, image: CxrImage) -> None:
        write_png_gray8(self.images_dir / f"{image.id}.png", image.pixels)

    def image_path(self, image_id: str) -> Path:
        path = self.images_dir / f"{image_id}.png"
        if not path.exists():
            raise KeyError(f"unknown image id {image_id!r}")
        return path

    # -- task lifecycle ----------------------------------------------------

    def add_task(self, task: AnnotationTask, hidden: dict) -> None:
        with self._mutex:
            if task.task_id in self.state["tasks"]:
                raise ConflictError(f"task {task.task_id!r} already exists")
            self._append_event(
                {"type": "task_created", "task": task.as_dict(), "hidden": hidden}
            )

    def get_task(self, task_id: str) -> AnnotationTask:
        d = self.state["tasks"].get(task_id)
        if d is None:
            raise KeyError(f"unknown task {task_id!r}")
        return AnnotationTask.from_dict(d)

    def tasks(self) -> list:
        return [AnnotationTask.from_dict(d) for d in self.state["tasks"].values()]

    def next_task(self, reviewer_id: str, now: float | None = None) -> AnnotationTask | None:
        """Hand the reviewer an open task and lock it (expiry reopens it).

        A reviewer that already holds a live lock gets the same task back.
        """
        now = time.time() if now is None else now
        with self._mutex:
            self._reopen_expired(now)
            for task_id in sorted(self.state["tasks"]):
                d = self.state["tasks"][task_id]
                if (
                    d["status"] == "locked"
                    and d["lock"]
                    and d["lock"]["reviewer_id"] == reviewer_id
                ):
                    return AnnotationTask.from_dict(d)
            for task_id in sorted(self.state["tasks"]):
                d = self.state["tasks"][task_id]
                if d["status"] == "open":
                    self._append_event(
                        {
                            "type": "task_locked",
                            "task_id": task_id,
                            "reviewer_id": reviewer_id,
                            "expires_at": now + self.lock_seconds,
                        }
                    )
                    return AnnotationTask.from_dict(self.state["tasks"][task_id])
            return None

    def renew_lock(self, task_id: str, reviewer_id: str, now: float | None = None) -> None:
        now = time.time() if now is None else now
        with self._mutex:
            d = self.state["tasks"].get(task_id)
            if d is None:
                raise KeyError(f"unknown task {task_id!r}")
            lock = d.get("lock")
            if d["status"] != "locked" or not lock or lock["reviewer_id"] != reviewer_id:
                raise StaleLockError(f"reviewer {reviewer_id!r} does not hold task {task_id!r}")
            self._append_event(
                {
                    "type": "task_locked",
                    "task_id": task_id,
                    "reviewer_id": reviewer_id,
                    "expires_at": now + self.lock_seconds,
                }
            )

    def _reopen_expired(self, now: float) -> None:
        for task_id in sorted(self.state["tasks"]):
            d = self.state["tasks"][task_id]
            if d["status"] == "locked" and d["lock"] and d["lock"]["expires_at"] < now:
                self._append_event({"type": "task_reopened", "task_id": task_id})

    def submit_selection(self, sel: Selection, now: float | None = None) -> AnnotationTask:
        now = time.time() if now is None else now
        with self._mutex:
            d = self.state["tasks"].get(sel.task_id)
            if d is None:
                raise KeyError(f"unknown task {sel.task_id!r}")
            if d["status"] in ("completed", "rejected_all"):
                raise ConflictError(f"task {sel.task_id!r} already {d['status']}")
            lock = d.get("lock")
            if (
                d["status"] != "locked"
                or not lock
                or lock["reviewer_id"] != sel.reviewer_id
                or lock["expires_at"] < now
            ):
                raise StaleLockError(
                    f"reviewer {sel.reviewer_id!r} does not hold a live lock on {sel.task_id!r}"
                )
            labels = [c["label"] for c in d["candidates"]]
            if sel.choice == REJECT_ALL:
                if d["stage"] != "stage2":
                    raise ValueError("rejecting every candidate is only allowed in stage2")
            elif sel.choice not in labels:
                raise ValueError(f"choice {sel.choice!r} not among candidates {labels}")
            self._append_event(
                {
                    "type": "selection_submitted",
                    "task_id": sel.task_id,
                    "reviewer_id": sel.reviewer_id,
                    "choice": sel.choice,
                    "timestamp": sel.timestamp,
                }
            )
            return AnnotationTask.from_dict(self.state["tasks"][sel.task_id])

    def import_fallback_mask(self, image_id: str, mask: SegMask, reviewer_id: str,
                             timestamp: float | None = None) -> str:
        """Attach a manually drawn mask to an image whose task was rejected."""
        timestamp = time.time() if timestamp is None else timestamp
        with self._mutex:
            if image_id not in self.state["fallback_pending"]:
                raise KeyError(f"image {image_id!r} is not awaiting a fallback mask")
            ref = self.put_mask(mask.pixels)
            self._append_event(
                {
                    "type": "fallback_imported",
                    "image_id": image_id,
                    "mask_ref": ref,
                    "reviewer_id": reviewer_id,
                    "timestamp": timestamp,
                }
            )
            return ref

    # -- reviewer-facing payloads -------------------------------------------

    def task_payload(self, task: AnnotationTask) -> dict:
        """The blinded JSON sent to reviewers: no provenance anywhere."""
        return {
            "task_id": task.task_id,
            "image_url": f"/api/images/{task.image_id}",
            "candidates": [
                {"label": c.label, "mask_url": f"/api/masks/{c.mask_ref}"}
                for c in task.candidates
            ],
            "stage": task.stage,
            "allow_reject_all": task.stage == "stage2",
        }

    def progress(self) -> dict:
        counts = {"open": 0, "locked": 0, "completed": 0, "rejected_all": 0}
        for d in self.state["tasks"].values():
            counts[d["status"]] += 1
        counts["fallback_pending"] = len(self.state["fallback_pending"])
        return counts

    # -- export --------------------------------------------------------------

    def export_ground_truth(self, out_dir) -> dict:
        """One collaborative mask per completed image plus an audit manifest."""
        out = Path(out_dir)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        entries, pending = [], []
        for task_id in sorted(self.state["tasks"]):
            d = self.state["tasks"][task_id]
            image_id = d["image_id"]
            if d["status"] == "completed":
                choice = d["selection"]["choice"]
                ref = next(c["mask_ref"] for c in d["candidates"] if c["label"] == choice)
                selected_from = self.state["hidden_provenance"][task_id][choice]
                reviewer = d["selection"]["reviewer_id"]
            elif d["status"] == "rejected_all" and image_id in self.state["fallback_masks"]:
                fb = self.state["fallback_masks"][image_id]
                ref, selected_from, reviewer = fb["mask_ref"], "manual-fallback", fb["reviewer_id"]
            else:
                pending.append(image_id)
                continue
            data = (self.masks_dir / f"{ref}.png").read_bytes()
            (out / "masks" / f"{image_id}.png").write_bytes(data)
            entries.append(
                {
                    "image_id": image_id,
                    "mask_ref": ref,
                    "provenance": "collaborative",
                    "selected_from": selected_from,
                    "reviewer": reviewer,
                    "permutation_seed": d["permutation_seed"],
                    "stage": d["stage"],
                }
            )
        manifest = {"masks": entries, "pending": sorted(pending)}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return manifest

    def load_exported_mask(self, export_dir, image_id: str) -> SegMask:
        data = (Path(export_dir) / "masks" / f"{image_id}.png").read_bytes()
        return SegMask(image_id=image_id, pixels=mask_from_png_bytes(data),
                       provenance="collaborative")


# -- pure event fold ---------------------------------------------------------


def apply_event(state: dict, event: dict) -> dict:
    state = json.loads(json.dumps(state))  # defensive copy, keeps types JSON-plain
    etype = event["type"]
    if etype == "campaign_created":
        state["stage"] = event["stage"]
        state["seed"] = event["seed"]
    elif etype == "task_created":
        task = event["task"]
        state["tasks"][task["task_id"]] = task
        state["hidden_provenance"][task["task_id"]] = event["hidden"]
    elif etype == "task_locked":
        d = state["tasks"][event["task_id"]]
        d["status"] = "locked"
        d["lock"] = {"reviewer_id": event["reviewer_id"], "expires_at": event["expires_at"]}
    elif etype == "task_reopened":
        d = state["tasks"][event["task_id"]]
        d["status"] = "open"
        d["lock"] = None
    elif etype == "selection_submitted":
        d = state["tasks"][event["task_id"]]
        d["lock"] = None
        d["selection"] = {
            "reviewer_id": event["reviewer_id"],
            "choice": event["choice"],
            "timestamp": event["timestamp"],
        }
        if event["choice"] == REJECT_ALL:
            d["status"] = "rejected_all"
            state["fallback_pending"].append(d["image_id"])
        else:
            d["status"] = "completed"
    elif etype == "fallback_imported":
        state["fallback_pending"] = [
            i for i in state["fallback_pending"] if i != event["image_id"]
        ]
        state["fallback_masks"][event["image_id"]] = {
            "mask_ref": event["mask_ref"],
            "reviewer_id": event["reviewer_id"],
            "timestamp": event["timestamp"],
        }
    else:
        raise ValueError(f"unknown event type {etype!r}")
    state["next_seq"] = event["seq"] + 1
    return state


def replay_events(events) -> dict:
    state = {
        "stage": None,
        "seed": None,
        "next_seq": 0,
        "tasks": {},
        "hidden_provenance": {},
        "fallback_pending": [],
        "fallback_masks": {},
    }
    for event in events:
        state = apply_event(state, event)
    return state


def canonical_state_bytes(state: dict) -> bytes:
    return json.dumps(state, sort_keys=True, separators=(",", ":")).encode()


# -- campaign builders --------------------------------------------------------


def default_stage1_configs(scale: str = "desk", input_size: int = 64) -> list:
    """Three decoder families over the densenet121 encoder."""
    return [
        ModelConfig(decoder=d, encoder="densenet121", input_size=input_size, scale=scale)
        for d in ("unet", "unetpp", "dla")
    ]


def default_stage2_configs(scale: str = "desk", input_size: int = 64) -> list:
    """The stage-1 trio plus two encoder variants of the U-Net."""
    return default_stage1_configs(scale, input_size) + [
        ModelConfig(decoder="unet", encoder=e, input_size=input_size, scale=scale)
        for e in ("inceptionv3", "resnet50")
    ]


def _blinded_task(store: CampaignStore, rng: np.random.Generator, task_id: str,
                  image_id: str, stage: str, refs_with_provenance: list) -> None:
    permutation_seed = int(rng.integers(2**31))
    order = np.random.default_rng(permutation_seed).permutation(len(refs_with_provenance))
    candidates, hidden = [], {}
    for display_pos, src_idx in enumerate(order):
        label = str(display_pos + 1)
        ref, provenance = refs_with_provenance[src_idx]
        candidates.append(Candidate(label=label, mask_ref=ref))
        hidden[label] = provenance
    task = AnnotationTask(
        task_id=task_id,
        image_id=image_id,
        stage=stage,
        candidates=candidates,
        permutation_seed=permutation_seed,
    )
    store.add_task(task, hidden)


def create_stage1(subset, model_configs, root, fold_k: int = 5, seed: int = 0,
                  train_config: TrainConfig | None = None,
                  lock_seconds: float = DEFAULT_LOCK_SECONDS) -> CampaignStore:
    """Stage I: cross-validated model predictions compete with manual masks.

    Each of the three configs is trained in a ``fold_k``-fold scheme over the
    manually annotated subset; every image's task holds its manual mask plus
    the three test-fold predictions in blinded random order.
    """
    subset = list(subset)
    for image, mask in subset:
        if mask is None:
            raise ValueError(f"image {image.id!r} has no manual mask")
    if len(model_configs) != STAGE1_CANDIDATES - 1:
        raise ValueError(f"stage1 expects {STAGE1_CANDIDATES - 1} model configs")
    train_config = train_config or TrainConfig.segmentation_defaults(seed=seed)

    store = CampaignStore.create(root, stage="stage1", seed=seed, lock_seconds=lock_seconds)
    samples = {image.id: (image, mask) for image, mask in subset}
    plan = make_folds([(image.id, image.label) for image, _ in subset], k=fold_k, seed=seed)

    predictions = {}  # image_id -> list of (mask_ref, provenance)
    for ci, config in enumerate(model_configs):
        _, probs = run_cross_validation(plan, config, train_config, samples,
                                        build_seed=seed * 101 + ci)
        for image_id, prob in probs.items():
            binary = (prob.pixels >= 0.5).astype(np.uint8)
            ref = store.put_mask(binary)
            predictions.setdefault(image_id, []).append(
                (ref, f"model:{config.decoder}-{config.encoder}")
            )

    rng = np.random.default_rng((seed, 1))
    for idx, (image, mask) in enumerate(subset):
        store.put_image(image)
        manual_ref = store.put_mask(mask.pixels)
        refs = [(manual_ref, "manual")] + predictions[image.id]
        _blinded_task(store, rng, f"t{idx:05d}", image.id, "stage1", refs)
    return store


def create_stage2(collab_pairs, unannotated_images, model_configs, root, seed: int = 0,
                  train_config: TrainConfig | None = None,
                  lock_seconds: float = DEFAULT_LOCK_SECONDS) -> CampaignStore:
    """Stage II: five networks trained on the collaborative masks propose
    candidates for unannotated images; reviewers may reject all of them."""
    collab_pairs = list(collab_pairs)
    unannotated_images = list(unannotated_images)
    if len(model_configs) != STAGE2_CANDIDATES:
        raise ValueError(f"stage2 expects {STAGE2_CANDIDATES} model configs")
    train_config = train_config or TrainConfig.segmentation_defaults(seed=seed)

    store = CampaignStore.create(root, stage="stage2", seed=seed, lock_seconds=lock_seconds)
    handles = []
    for ci, config in enumerate(model_configs):
        handle = build_segmentation_model(config, seed=seed * 211 + ci)
        train_segmentation(handle, collab_pairs, train_config)
        handles.append((handle, config))

    rng = np.random.default_rng((seed, 2))
    for idx, image in enumerate(unannotated_images):
        store.put_image(image)
        refs = []
        for handle, config in handles:
            prob = predict(handle, image)
            ref = store.put_mask((prob.pixels >= 0.5).astype(np.uint8))
            refs.append((ref, f"model:{config.decoder}-{config.encoder}"))
        _blinded_task(store, rng, f"t{idx:05d}", image.id, "stage2", refs)
    return store
