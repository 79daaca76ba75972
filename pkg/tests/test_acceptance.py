"""Acceptance suite: every exit criterion at its stated tolerance.

Each test is one criterion; the summary hook in conftest.py prints one
pass/fail line per criterion at the end of the run.
"""

import math
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from scipy import ndimage

from cxrinf.annotate import (
    OracleReviewer,
    RandomReviewer,
    canonical_state_bytes,
    create_app,
    create_stage1,
    create_stage2,
    default_stage1_configs,
    default_stage2_configs,
    mask_iou,
    replay_events,
    run_http_reviewer,
)
from cxrinf.dataset import SegMask, make_folds
from cxrinf.imageops import quantize_u8
from cxrinf.infermap import detect, jet_colormap, render_infection_map, rgb_to_hsv
from cxrinf.losses import (
    LossParams,
    balanced_cross_entropy,
    focal,
    hybrid_loss,
    hybrid_loss_grad,
)
from cxrinf.metrics import ConfusionMatrix, compute_metrics, confidence_interval, format_percent
from cxrinf.segmodel import ModelConfig, build_classifier, build_segmentation_model, count_params, set_encoder_frozen
from cxrinf.synth import make_synthetic_samples
from cxrinf.trainer import TrainConfig, train_segmentation, training_dice

TABLE_GROUP_I = {
    "cm": ConfusionMatrix(tp=2903, tn=12300, fp=244, fn=48),
    "percents": {
        "sensitivity": 98.37,
        "specificity": 98.05,
        "precision": 92.25,
        "f1": 95.21,
        "f2": 97.08,
        "accuracy": 98.12,
    },
}

TABLE_GROUP_II = {
    "cm": ConfusionMatrix(tp=829, tn=26534, fp=31, fn=44),
    "percents": {
        "sensitivity": 94.96,
        "specificity": 99.88,
        "precision": 96.40,
        "f1": 95.67,
        "f2": 95.24,
        "accuracy": 99.73,
    },
}


def desk_config(**kw):
    return ModelConfig(decoder="unet", encoder="densenet121", input_size=64, scale="desk", **kw)


def _check_metric_table(table):
    start = time.perf_counter()
    report = compute_metrics(table["cm"])
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"metric computation took {elapsed:.3f}s (limit 1s)"
    for name, expected in table["percents"].items():
        got = float(format_percent(report.metric(name)))
        assert abs(got - expected) <= 0.02, f"{name}: {got} vs published {expected}"


def test_c01_group_i_metric_reproduction():
    _check_metric_table(TABLE_GROUP_I)


def test_c02_group_ii_metric_reproduction():
    _check_metric_table(TABLE_GROUP_II)


def test_c03_loss_suite():
    rng = np.random.default_rng(0)
    # focal at gamma=0 equals balanced cross-entropy, 1e4 random scalars
    p = rng.integers(0, 2, 10_000).astype(float)
    q = rng.uniform(0.0, 1.0, 10_000)
    alpha = rng.uniform(0.0, 1.0, 10_000)
    diff = np.abs(focal(p, q, alpha, 0.0) - balanced_cross_entropy(p, q, alpha))
    assert diff.max() < 1e-12

    # hybrid loss vs an independent scalar double-loop oracle, 100 8x8 fields
    params = LossParams()
    for _ in range(100):
        pf = rng.integers(0, 2, (8, 8)).astype(float)
        qf = rng.uniform(0.0, 1.0, (8, 8))
        total, s_pq, s_p, s_q = 0.0, 0.0, 0.0, 0.0
        for i in range(8):
            for j in range(8):
                pij = pf[i, j]
                qij = min(max(qf[i, j], 1e-7), 1 - 1e-7)
                total += -params.alpha * (1 - qij) ** params.gamma * pij * math.log(qij)
                total += (
                    -(1 - params.alpha) * qij**params.gamma * (1 - pij) * math.log(1 - qij)
                )
                s_pq += pf[i, j] * qf[i, j]
                s_p += pf[i, j]
                s_q += qf[i, j]
        oracle = total / 64 + 1 - (2 * s_pq + params.epsilon) / (s_p + s_q + params.epsilon)
        assert abs(hybrid_loss(pf, qf, params) - oracle) < 1e-10

    # analytic gradient vs central finite differences, step 1e-4
    step = 1e-4
    for _ in range(10):
        pf = rng.integers(0, 2, (8, 8)).astype(float)
        qf = rng.uniform(0.05, 0.95, (8, 8))
        analytic = hybrid_loss_grad(pf, qf, params)
        fd = np.zeros_like(qf)
        for i in range(8):
            for j in range(8):
                qp, qm = qf.copy(), qf.copy()
                qp[i, j] += step
                qm[i, j] -= step
                fd[i, j] = (hybrid_loss(pf, qp, params) - hybrid_loss(pf, qm, params)) / (
                    2 * step
                )
        rel = np.max(np.abs(analytic - fd)) / np.max(np.abs(fd))
        assert rel < 1e-4


def test_c04_overfit_probe():
    start = time.perf_counter()
    samples = make_synthetic_samples(8, 0, size=64, seed=7)
    handle = build_segmentation_model(desk_config(), seed=0)
    config = TrainConfig(learning_rate=3e-3, epochs=200, batch_size=8, seed=0)
    train_segmentation(handle, samples, config)
    dice = training_dice(handle, samples)
    elapsed = time.perf_counter() - start
    assert dice >= 0.95, f"training dice {dice:.4f} below 0.95"
    assert elapsed < 600, f"overfit probe took {elapsed:.0f}s (limit 10 min)"


def test_c05_frozen_encoder_invariance():
    samples = make_synthetic_samples(8, 0, size=64, seed=11)
    handle = build_segmentation_model(desk_config(encoder_frozen=True), seed=1)
    before = {k: v.clone() for k, v in handle.module.encoder.state_dict().items()}
    # 8 samples / batch 8 -> one optimizer step per epoch; 5 epochs = 5 steps
    config = TrainConfig(learning_rate=1e-3, epochs=5, batch_size=8, seed=0)
    train_segmentation(handle, samples, config)
    after = handle.module.encoder.state_dict()
    for key, tensor in before.items():
        assert torch.equal(tensor, after[key]), f"encoder tensor changed: {key}"

    fresh = build_segmentation_model(desk_config(), seed=1)
    t0, n0 = count_params(fresh)
    encoder_size = sum(p.numel() for p in fresh.module.encoder.parameters())
    set_encoder_frozen(fresh, True)
    t1, n1 = count_params(fresh)
    assert (t1, n1) == (t0 - encoder_size, n0 + encoder_size)
    set_encoder_frozen(fresh, False)
    assert count_params(fresh) == (t0, n0)


def test_c06_infection_map():
    assert jet_colormap(0.0) == (0.0, 0.0, 0.5)
    assert jet_colormap(1.0) == (0.5, 0.0, 0.0)
    rng = np.random.default_rng(3)
    tau = 0.01
    for _ in range(50):
        gray = rng.uniform(0, 1, (24, 24))
        prob = rng.uniform(0, 1, (24, 24)) * rng.choice([0.0, 1.0], (24, 24), p=[0.3, 0.7])
        imap = render_infection_map(gray, prob, tau_vis=tau)
        shown = prob > tau
        if shown.any():
            v_out = rgb_to_hsv(imap.rgb)[..., 2]
            assert np.max(np.abs(v_out[shown] - gray[shown])) < 1e-6
        hidden = ~shown
        if hidden.any():
            q_out = quantize_u8(imap.rgb)
            q_in = quantize_u8(np.repeat(gray[..., None], 3, axis=-1))
            assert np.array_equal(q_out[hidden], q_in[hidden])


def test_c07_detection_rule():
    prob = np.zeros((8, 8))
    prob[4, 4] = 0.5
    assert detect(prob) is True
    prob[4, 4] = 0.499
    assert detect(prob) is False

    rng = np.random.default_rng(4)
    for _ in range(1000):
        mask = rng.uniform(0, 1, (7, 7)) * rng.uniform(0.4, 1.05)
        mask = np.clip(mask, 0, 1)
        brute = any(float(mask[i, j]) >= 0.5 for i in range(7) for j in range(7))
        assert detect(mask) == brute


def test_c08_fold_plan_at_published_sizes():
    catalog = [(f"c{i}", "covid") for i in range(2951)]
    catalog += [(f"n{i}", "control") for i in range(12544)]
    plan = make_folds(catalog, k=5, ratio=0.8, seed=0)

    all_test = []
    for fold in range(5):
        test_ids = plan.test_ids(fold)
        all_test.extend(test_ids)
        covid = sum(1 for i in test_ids if i.startswith("c"))
        control = len(test_ids) - covid
        assert abs(covid - 2951 / 5) <= 1
        assert abs(control - 12544 / 5) <= 1
        train_ids = plan.train_ids(fold)
        assert len(train_ids) + len(test_ids) == 15495
        assert abs(len(train_ids) / 15495 - 0.8) < 0.001
    assert sorted(all_test) == sorted(i for i, _ in catalog)  # partition property


def test_c09_confidence_interval_formula():
    assert abs(confidence_interval(0.5, 100, 1.96) - 0.098) < 1e-12
    assert confidence_interval(0.0, 100) == 0.0
    assert confidence_interval(1.0, 100) == 0.0


def test_c10_grad_cam():
    from torch import nn

    from cxrinf.gradcam import grad_cam
    from cxrinf.segmodel import ModelHandle

    # finite-difference agreement on a toy classifier, relative error < 1e-3
    torch.manual_seed(0)

    class ToyEncoder(nn.Module):
        def __init__(self):
            super().__init__()
            self.conv = nn.Conv2d(1, 3, 3, padding=1, bias=False)
            self.relu = nn.ReLU()
            self.out_channels = [3]
            self.cam_layer = "relu"

        def forward(self, x):
            return [self.relu(self.conv(x))]

    class Toy(nn.Module):
        def __init__(self):
            super().__init__()
            self.encoder = ToyEncoder()
            self.pool = nn.AdaptiveAvgPool2d(1)
            self.fc = nn.Linear(3, 2)

        def forward(self, x):
            return self.fc(self.pool(self.encoder(x)[-1]).flatten(1))

    toy = Toy().double()
    rng = np.random.default_rng(1)
    image = rng.uniform(0, 1, (12, 12))
    x = torch.from_numpy(image).reshape(1, 1, 12, 12)
    feats = toy.encoder(x)[-1].detach()

    def head_score(a):
        return toy.fc(toy.pool(a).flatten(1))[0, 1]

    a = feats.clone().requires_grad_(True)
    analytic = torch.autograd.grad(head_score(a), a)[0].numpy()
    step = 1e-4
    with torch.no_grad():
        for _ in range(25):
            k = int(rng.integers(3))
            i = int(rng.integers(12))
            j = int(rng.integers(12))
            plus, minus = feats.clone(), feats.clone()
            plus[0, k, i, j] += step
            minus[0, k, i, j] -= step
            fd = (float(head_score(plus)) - float(head_score(minus))) / (2 * step)
            assert abs(analytic[0, k, i, j] - fd) / max(abs(fd), 1e-8) < 1e-3

    # non-negative maps on a real desk classifier
    handle = build_classifier("densenet121", scale="desk", seed=2)
    act = grad_cam(handle, rng.uniform(0, 1, (64, 64)), class_index=1)
    assert act.values.min() >= 0.0
    assert act.values.max() in (0.0, 1.0)

    # linear toy: score = GAP(A^0) makes the map proportional to A^0
    toy32 = Toy()
    with torch.no_grad():
        toy32.fc.weight.zero_()
        toy32.fc.bias.zero_()
        toy32.fc.weight[1, 0] = 1.0
    toy_handle = ModelHandle(module=toy32, config=desk_config(), head="classifier_2way")
    image32 = rng.uniform(0, 1, (16, 16))
    act = grad_cam(toy_handle, image32, class_index=1, layer="encoder.relu")
    with torch.no_grad():
        a0 = toy32.encoder(torch.from_numpy(image32.astype(np.float32)).reshape(1, 1, 16, 16))[
            -1
        ][0, 0].numpy()
    corr = np.corrcoef(act.values.ravel(), a0.ravel())[0, 1]
    assert corr > 0.999


def test_c11_annotation_loop_end_to_end(tmp_path):
    start = time.perf_counter()
    quick = TrainConfig(learning_rate=1e-3, epochs=2, batch_size=8, seed=0)

    # 20-image synthetic campaign; manual masks are degraded truths
    pairs = make_synthetic_samples(20, 0, size=64, seed=31)
    truths = {image.id: mask.pixels for image, mask in pairs}
    subset = []
    for image, mask in pairs:
        manual = ndimage.binary_erosion(mask.pixels, iterations=2).astype(np.uint8)
        subset.append((image, SegMask(image_id=image.id, pixels=manual, provenance="manual")))
    manual_baseline = float(
        np.mean([mask_iou(m.pixels, truths[i.id]) for i, m in subset])
    )

    store = create_stage1(subset, default_stage1_configs(), tmp_path / "stage1",
                          fold_k=5, seed=0, train_config=quick)
    client = TestClient(create_app(store))
    oracle = OracleReviewer(truths, reviewer_id="oracle-1")
    completed = run_http_reviewer(client, oracle)
    assert completed == 20

    manifest = store.export_ground_truth(tmp_path / "export1")
    assert len(manifest["masks"]) == 20 and manifest["pending"] == []
    collab_ious = []
    collab_pairs = []
    for image, _ in subset:
        mask = store.load_exported_mask(tmp_path / "export1", image.id)
        collab_ious.append(mask_iou(mask.pixels, truths[image.id]))
        collab_pairs.append((image, mask))
    mean_iou = float(np.mean(collab_ious))
    assert mean_iou >= manual_baseline - 1e-12, (
        f"collaborative IoU {mean_iou:.4f} below manual baseline {manual_baseline:.4f}"
    )

    # stage-1 event log replays to the exact snapshot
    assert canonical_state_bytes(replay_events(store.read_events())) == \
        store.snapshot_path.read_bytes()

    # Stage II over fresh unannotated images; one reviewer rejects everything
    unannotated = [img for img, _ in make_synthetic_samples(5, 0, size=64, seed=77)]
    store2 = create_stage2(collab_pairs, unannotated, default_stage2_configs(),
                           tmp_path / "stage2", seed=0, train_config=quick)
    client2 = TestClient(create_app(store2))
    rejector = RandomReviewer(seed=0, reject_rate=1.0, reviewer_id="rejector")
    run_http_reviewer(client2, rejector, max_tasks=1)
    progress = client2.get("/api/progress").json()
    assert progress["rejected_all"] == 1
    assert progress["fallback_pending"] == 1

    truths2 = {img.id: make_synthetic_samples(5, 0, size=64, seed=77)[i][1].pixels
               for i, img in enumerate(unannotated)}
    oracle2 = OracleReviewer(truths2, reviewer_id="oracle-2")
    run_http_reviewer(client2, oracle2)
    assert client2.get("/api/progress").json()["open"] == 0

    assert canonical_state_bytes(replay_events(store2.read_events())) == \
        store2.snapshot_path.read_bytes()

    elapsed = time.perf_counter() - start
    assert elapsed < 900, f"annotation loop took {elapsed:.0f}s (limit 15 min)"
