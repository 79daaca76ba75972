import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxrinf.losses import (
    LossParams,
    Q_MIN,
    balanced_cross_entropy,
    cross_entropy,
    dice_coefficient,
    dice_loss,
    focal,
    hybrid_loss,
    hybrid_loss_grad,
)


def scalar_hybrid_oracle(p_field, q_field, params):
    """Independent double-loop evaluation of mean focal + dice loss."""
    h, w = p_field.shape
    total = 0.0
    sum_pq = sum_p = sum_q = 0.0
    for i in range(h):
        for j in range(w):
            p = float(p_field[i, j])
            q = min(max(float(q_field[i, j]), Q_MIN), 1.0 - Q_MIN)
            total += -params.alpha * (1.0 - q) ** params.gamma * p * math.log(q)
            total += -(1.0 - params.alpha) * q**params.gamma * (1.0 - p) * math.log(1.0 - q)
            sum_pq += float(p_field[i, j]) * float(q_field[i, j])
            sum_p += float(p_field[i, j])
            sum_q += float(q_field[i, j])
    focal_mean = total / (h * w)
    dice = 1.0 - (2.0 * sum_pq + params.epsilon) / (sum_p + sum_q + params.epsilon)
    return focal_mean + dice


class TestCrossEntropy:
    def test_perfect_prediction_near_zero(self):
        assert cross_entropy(1, 1 - Q_MIN) < 1e-6

    def test_half_probability(self):
        assert cross_entropy(1, 0.5) == pytest.approx(0.693147, abs=1e-6)

    def test_symmetry_at_half(self):
        assert cross_entropy(0, 0.5) == pytest.approx(cross_entropy(1, 0.5), abs=1e-12)

    def test_clamps_zero_probability(self):
        assert np.isfinite(cross_entropy(1, 0.0))
        assert np.isfinite(cross_entropy(0, 1.0))


class TestBalancedCrossEntropy:
    def test_alpha_half_is_half_ce(self):
        rng = np.random.default_rng(0)
        p = rng.integers(0, 2, 50).astype(float)
        q = rng.uniform(0.01, 0.99, 50)
        np.testing.assert_allclose(
            balanced_cross_entropy(p, q, 0.5), 0.5 * cross_entropy(p, q), rtol=1e-12
        )

    def test_positive_case(self):
        assert balanced_cross_entropy(1, 0.5, 0.25) == pytest.approx(0.173287, abs=1e-6)

    def test_negative_case(self):
        assert balanced_cross_entropy(0, 0.5, 0.25) == pytest.approx(0.519860, abs=1e-6)


class TestFocal:
    @given(
        p=st.integers(0, 1),
        q=st.floats(1e-6, 1 - 1e-6),
        alpha=st.floats(0.0, 1.0),
    )
    @settings(max_examples=200)
    def test_gamma_zero_equals_bce(self, p, q, alpha):
        assert abs(focal(p, q, alpha, 0.0) - balanced_cross_entropy(p, q, alpha)) < 1e-12

    def test_default_setting_value(self):
        # 0.25 * (1-0.5)^2 * (-log 0.5)
        assert focal(1, 0.5, 0.25, 2.0) == pytest.approx(0.043322, abs=1e-6)

    def test_easy_sample_downweighted_to_zero(self):
        assert focal(1, 1 - Q_MIN, 0.25, 2.0) < 1e-12

    def test_strictly_decreasing_in_q_for_positive_pixel(self):
        qs = np.linspace(0.01, 0.99, 200)
        vals = focal(np.ones_like(qs), qs, 0.25, 2.0)
        assert np.all(np.diff(vals) < 0)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        p = rng.integers(0, 2, 1000).astype(float)
        q = rng.uniform(0, 1, 1000)
        assert np.all(focal(p, q, 0.25, 2.0) >= 0)


class TestDice:
    def test_identical_masks(self):
        m = np.zeros((6, 6), dtype=np.uint8)
        m[2:4, 2:4] = 1
        assert abs(dice_coefficient(m, m) - 1.0) < 1e-5

    def test_disjoint_masks(self):
        a = np.zeros((6, 6), dtype=np.uint8)
        b = np.zeros((6, 6), dtype=np.uint8)
        a[0, 0] = 1
        b[5, 5] = 1
        assert dice_coefficient(a, b) < 1e-5

    def test_one_extra_pixel(self):
        a = np.zeros((4, 4), dtype=np.uint8)
        b = np.zeros((4, 4), dtype=np.uint8)
        a[1, 1] = 1
        b[1, 1] = 1
        b[1, 2] = 1
        assert dice_coefficient(a, b) == pytest.approx(2.0 / 3.0, abs=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_coefficient(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            dice_coefficient(np.full((2, 2), 0.5), np.zeros((2, 2)))

    def test_dice_loss_fixed_point(self):
        m = np.zeros((5, 5))
        m[1:3, 1:3] = 1.0
        assert dice_loss(m, m) == pytest.approx(0.0, abs=1e-6)

    def test_dice_loss_half(self):
        p = np.array([[1.0, 0.0], [0.0, 0.0]])
        q = np.array([[0.5, 0.5], [0.0, 0.0]])
        assert dice_loss(p, q) == pytest.approx(0.5, abs=1e-5)

    def test_dice_loss_empty_fields(self):
        z = np.zeros((3, 3))
        assert dice_loss(z, z) == pytest.approx(0.0, abs=1e-12)


class TestHybrid:
    def test_perfect_match_near_zero(self):
        m = np.zeros((8, 8))
        m[2:5, 2:5] = 1.0
        q = np.clip(m, Q_MIN, 1 - Q_MIN)
        assert hybrid_loss(m, q) < 1e-5

    def test_additivity(self):
        rng = np.random.default_rng(3)
        p = rng.integers(0, 2, (6, 6)).astype(float)
        q = rng.uniform(0.01, 0.99, (6, 6))
        params = LossParams()
        expected = float(np.mean(focal(p, q, params.alpha, params.gamma))) + dice_loss(
            p, q, params.epsilon
        )
        assert hybrid_loss(p, q, params) == pytest.approx(expected, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(42)
        params = LossParams()
        for _ in range(100):
            p = rng.integers(0, 2, (3, 3)).astype(float)
            q = rng.uniform(0.0, 1.0, (3, 3))
            assert hybrid_loss(p, q, params) == pytest.approx(
                scalar_hybrid_oracle(p, q, params), abs=1e-10
            )

    def test_non_negative(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p = rng.integers(0, 2, (5, 5)).astype(float)
            q = rng.uniform(0, 1, (5, 5))
            assert hybrid_loss(p, q) >= 0


class TestGradient:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(5)
        params = LossParams()
        step = 1e-4
        for _ in range(20):
            p = rng.integers(0, 2, (8, 8)).astype(float)
            q = rng.uniform(0.05, 0.95, (8, 8))
            analytic = hybrid_loss_grad(p, q, params)
            fd = np.zeros_like(q)
            for i in range(8):
                for j in range(8):
                    qp, qm = q.copy(), q.copy()
                    qp[i, j] += step
                    qm[i, j] -= step
                    fd[i, j] = (hybrid_loss(p, qp, params) - hybrid_loss(p, qm, params)) / (
                        2 * step
                    )
            rel = np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-12)
            assert rel < 1e-4
