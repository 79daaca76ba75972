"""Scripted reviewers for automated end-to-end campaign runs.

The oracle picks the candidate with the highest IoU against a hidden truth it
alone can see; the random reviewer picks uniformly (optionally rejecting in
stage2). Both work the blinded payloads only, over HTTP or directly against
a store.
"""

from __future__ import annotations

import numpy as np

from .campaign import REJECT_ALL, CampaignStore, Selection, mask_from_png_bytes


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = a > 0
    b = b > 0
    union = np.sum(a | b)
    if union == 0:
        return 1.0
    return float(np.sum(a & b)) / float(union)


class OracleReviewer:
    """Always selects the candidate closest to the hidden ground truth."""

    def __init__(self, hidden_truths: dict, reviewer_id: str = "oracle"):
        self.hidden_truths = {k: np.asarray(getattr(v, "pixels", v)) for k, v in
                              hidden_truths.items()}
        self.reviewer_id = reviewer_id

    def choose(self, payload: dict, masks: dict) -> str:
        truth = self.hidden_truths[_image_id(payload)]
        best_label, best_iou = None, -1.0
        for cand in payload["candidates"]:
            iou = mask_iou(masks[cand["label"]], truth)
            if iou > best_iou:
                best_label, best_iou = cand["label"], iou
        return best_label


class RandomReviewer:
    """Uniform random choice; rejects with ``reject_rate`` where allowed."""

    def __init__(self, seed: int = 0, reject_rate: float = 0.0, reviewer_id: str = "random"):
        self.rng = np.random.default_rng(seed)
        self.reject_rate = reject_rate
        self.reviewer_id = reviewer_id

    def choose(self, payload: dict, masks: dict) -> str:
        if payload["allow_reject_all"] and self.rng.uniform() < self.reject_rate:
            return REJECT_ALL
        labels = [c["label"] for c in payload["candidates"]]
        return labels[int(self.rng.integers(len(labels)))]


def _image_id(payload: dict) -> str:
    return payload["image_url"].rsplit("/", 1)[-1].removesuffix(".png")


def run_store_reviewer(store: CampaignStore, reviewer, max_tasks: int | None = None) -> int:
    """Drive a reviewer against the store API until the queue is empty."""
    done = 0
    while max_tasks is None or done < max_tasks:
        task = store.next_task(reviewer.reviewer_id)
        if task is None:
            break
        payload = store.task_payload(task)
        masks = {c.label: store.get_mask(c.mask_ref) for c in task.candidates}
        choice = reviewer.choose(payload, masks)
        store.submit_selection(
            Selection(task_id=task.task_id, reviewer_id=reviewer.reviewer_id, choice=choice)
        )
        done += 1
    return done


def run_http_reviewer(client, reviewer, max_tasks: int | None = None) -> int:
    """Drive a reviewer through the HTTP surface (httpx-compatible client)."""
    done = 0
    while max_tasks is None or done < max_tasks:
        resp = client.get("/api/tasks/next", params={"reviewer": reviewer.reviewer_id})
        if resp.status_code == 204:
            break
        resp.raise_for_status()
        payload = resp.json()
        masks = {}
        for cand in payload["candidates"]:
            mask_resp = client.get(cand["mask_url"])
            mask_resp.raise_for_status()
            masks[cand["label"]] = mask_from_png_bytes(mask_resp.content)
        choice = reviewer.choose(payload, masks)
        submit = client.post(
            f"/api/tasks/{payload['task_id']}/selection",
            json={"reviewer": reviewer.reviewer_id, "choice": choice},
        )
        submit.raise_for_status()
        done += 1
    return done
