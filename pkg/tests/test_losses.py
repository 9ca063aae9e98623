"""Loss oracles: analytic cases, scalar-loop and term-by-term references."""

import math

import numpy as np
import pytest

from speechret import losses as L
from speechret import tensor as T
from speechret.errors import ConfigError, DimensionError
from speechret.tensor import Tensor


def scalar_bce(y_hat, y, eps=1e-7):
    """Pure-python reference: summed cross entropy over one vector."""
    total = 0.0
    for p, t in zip(y_hat, y):
        p = min(max(p, eps), 1.0 - eps)
        total -= t * math.log(p) + (1.0 - t) * math.log(1.0 - p)
    return total


def scalar_cosine_distance(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 1.0 - dot / (na * nb)


def scalar_contrastive(vs, ss, neg_v, neg_s, margin):
    """Term-by-term evaluation of the hinge formula on python floats."""
    total = 0.0
    for i in range(len(vs)):
        d_pos = scalar_cosine_distance(vs[i], ss[i])
        acc_v = sum(max(0.0, margin + d_pos - scalar_cosine_distance(vs[j], ss[i]))
                    for j in neg_v[i]) / len(neg_v[i])
        acc_s = sum(max(0.0, margin + d_pos - scalar_cosine_distance(vs[i], ss[j]))
                    for j in neg_s[i]) / len(neg_s[i])
        total += acc_v + acc_s
    return total / len(vs)


class TestWeights:
    def test_rep_weight_is_remainder(self):
        w = L.LossWeights(vis=0.35, bow=0.35)
        assert abs(w.rep - 0.30) < 1e-12

    def test_invalid_weights(self):
        with pytest.raises(ConfigError):
            L.LossWeights(vis=0.7, bow=0.7)
        with pytest.raises(ConfigError):
            L.LossWeights(vis=-0.1, bow=0.0)

    def test_contrastive_config_validation(self):
        with pytest.raises(ConfigError):
            L.ContrastiveConfig(margin=-1.0)
        with pytest.raises(ConfigError):
            L.ContrastiveConfig(n_neg=0)


class TestBceBagLoss:
    def test_two_ln_two(self):
        loss = L.bce_bag_loss(Tensor([0.5, 0.5]), [1.0, 0.0])
        assert abs(loss.item() - 2.0 * math.log(2.0)) < 1e-10

    def test_perfect_prediction_limit(self):
        eps = L.LOG_CLAMP_EPS
        n = 6
        y = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        y_hat = np.where(y > 0.5, 1.0 - eps, eps)
        loss = L.bce_bag_loss(Tensor(y_hat), y)
        assert loss.item() <= 2 * n * eps * math.log(1.0 / eps)

    def test_scalar_loop_oracle_1000_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            y = rng.uniform(0.0, 1.0, size=n)
            y_hat = rng.uniform(1e-4, 1.0 - 1e-4, size=n)
            ours = L.bce_bag_loss(Tensor(y_hat), y).item()
            ref = scalar_bce(y_hat.tolist(), y.tolist())
            assert abs(ours - ref) < 1e-12

    def test_batch_mean(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(size=(3, 4))
        y_hat = rng.uniform(0.1, 0.9, size=(3, 4))
        batched = L.bce_bag_loss(Tensor(y_hat), y).item()
        singles = [L.bce_bag_loss(Tensor(y_hat[i]), y[i]).item() for i in range(3)]
        assert abs(batched - np.mean(singles)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            L.bce_bag_loss(Tensor([0.5, 0.5]), [1.0])

    def test_nonnegative_always(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            y_hat = rng.uniform(0, 1, size=5)
            y = rng.uniform(0, 1, size=5)
            assert L.bce_bag_loss(Tensor(y_hat), y).item() >= 0.0


class TestContrastiveLoss:
    def test_satisfied_margin_zero_loss(self):
        # Matched pairs identical, all cross-item distances 1 (orthogonal).
        v = Tensor(np.eye(4))
        s = Tensor(np.eye(4))
        loss = L.contrastive_rep_loss(v, s, L.ContrastiveConfig(margin=0.5, n_neg=2),
                                      np.random.default_rng(0))
        assert loss.item() == 0.0

    def test_collapsed_batch_gives_two_margin(self):
        vec = np.tile([0.3, -0.2, 0.9], (5, 1))
        loss = L.contrastive_rep_loss(
            Tensor(vec.copy()), Tensor(vec.copy()),
            L.ContrastiveConfig(margin=0.4, n_neg=3), np.random.default_rng(1))
        assert abs(loss.item() - 0.8) < 1e-10

    def test_term_by_term_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            b = int(rng.integers(3, 7))
            d = int(rng.integers(2, 5))
            vs = rng.normal(size=(b, d)) + 0.1
            ss = rng.normal(size=(b, d)) - 0.1
            n_neg = int(rng.integers(1, b))
            margin = float(rng.uniform(0.0, 1.0))
            neg_v, neg_s = L.draw_negative_indices(b, n_neg,
                                                   np.random.default_rng(99))
            ours = L.contrastive_loss_fixed_negatives(
                Tensor(vs), Tensor(ss), neg_v, neg_s, margin).item()
            ref = scalar_contrastive(vs.tolist(), ss.tolist(), neg_v.tolist(),
                                     neg_s.tolist(), margin)
            assert abs(ours - ref) < 1e-12

    def test_negative_draws_exclude_anchor(self):
        rng = np.random.default_rng(8)
        neg_v, neg_s = L.draw_negative_indices(6, 4, rng)
        for i in range(6):
            assert i not in neg_v[i] and i not in neg_s[i]
            assert len(set(neg_v[i])) == 4 and len(set(neg_s[i])) == 4

    def test_batch_too_small(self):
        with pytest.raises(ConfigError):
            L.draw_negative_indices(3, 3, np.random.default_rng(0))

    def test_rescaling_single_vector_invariance(self):
        rng = np.random.default_rng(9)
        vs = rng.normal(size=(4, 3))
        ss = rng.normal(size=(4, 3))
        neg_v, neg_s = L.draw_negative_indices(4, 2, np.random.default_rng(1))
        base = L.contrastive_loss_fixed_negatives(
            Tensor(vs.copy()), Tensor(ss.copy()), neg_v, neg_s, 0.4).item()
        vs2 = vs.copy()
        vs2[2] *= 7.3
        scaled = L.contrastive_loss_fixed_negatives(
            Tensor(vs2), Tensor(ss.copy()), neg_v, neg_s, 0.4).item()
        assert abs(base - scaled) < 1e-10

    def test_margin_monotonicity_fixed_negatives(self):
        rng = np.random.default_rng(10)
        vs = rng.normal(size=(5, 4))
        ss = rng.normal(size=(5, 4))
        neg_v, neg_s = L.draw_negative_indices(5, 2, np.random.default_rng(2))
        values = [L.contrastive_loss_fixed_negatives(
            Tensor(vs.copy()), Tensor(ss.copy()), neg_v, neg_s, m).item()
            for m in (0.0, 0.2, 0.5, 1.0, 2.0)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_hinge_terms_bounded(self):
        # Each hinge is at most margin + 2 since distances live in [0, 2].
        rng = np.random.default_rng(11)
        margin = 0.7
        for _ in range(100):
            vs = rng.normal(size=(4, 3))
            ss = rng.normal(size=(4, 3))
            neg_v, neg_s = L.draw_negative_indices(4, 3, rng)
            loss = L.contrastive_loss_fixed_negatives(
                Tensor(vs), Tensor(ss), neg_v, neg_s, margin).item()
            assert 0.0 <= loss <= 2 * (margin + 2.0)


class TestCombinedLoss:
    def test_visual_endpoint_equals_vis_alone(self):
        l_vis = Tensor(np.asarray(1.7))
        total = L.combined_loss(L.VISUAL_BATCH, L.LossWeights(vis=1.0, bow=0.0),
                                l_vis=l_vis)
        assert total.item() == pytest.approx(1.7, abs=0)

    def test_text_endpoint_equals_bow_alone(self):
        l_bow = Tensor(np.asarray(0.9))
        total = L.combined_loss(L.TEXT_BATCH, L.LossWeights(vis=0.0, bow=1.0),
                                l_bow=l_bow)
        assert total.item() == pytest.approx(0.9, abs=0)

    def test_weighted_arithmetic(self):
        total = L.combined_loss(
            L.VISUAL_BATCH, L.LossWeights(vis=0.35, bow=0.35),
            l_vis=Tensor(np.asarray(2.0)), l_rep=Tensor(np.asarray(1.0)))
        assert abs(total.item() - (0.35 * 2.0 + 0.30 * 1.0)) < 1e-12

    def test_missing_component_rejected(self):
        with pytest.raises(ConfigError):
            L.combined_loss(L.VISUAL_BATCH, L.LossWeights(vis=0.5, bow=0.0),
                            l_vis=Tensor(np.asarray(1.0)))  # rep missing

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            L.combined_loss("nope", L.LossWeights())

    def test_text_batch_with_visual_components(self):
        total = L.combined_loss(
            L.TEXT_BATCH, L.LossWeights(vis=0.25, bow=0.5),
            l_bow=Tensor(np.asarray(1.0)), l_vis=Tensor(np.asarray(2.0)),
            l_rep=Tensor(np.asarray(4.0)))
        assert abs(total.item() - (0.5 * 1.0 + 0.25 * 2.0 + 0.25 * 4.0)) < 1e-12
