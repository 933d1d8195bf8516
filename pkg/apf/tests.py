import numpy as np
from django.test import SimpleTestCase

from apf.fusion import (
    METRICS,
    FusionConfig,
    ProposalBatch,
    attention_weights,
    fuse,
    fuse_vjp,
)
from core.exceptions import DegenerateNorm, InvalidConfig, InvalidLabel
from core.gradsuite import apf_check


def _batch(rows, labels=None):
    rows = np.asarray(rows, dtype=np.float64)
    if labels is None:
        labels = np.arange(rows.shape[0]) % 3
    return ProposalBatch(rows, labels)


def _max_pairwise_distance(x):
    return float(np.max(np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)))


def _random_batches(count, seed=2024):
    rng = np.random.default_rng(seed)
    for i in range(count):
        m, d = int(rng.integers(2, 65)), int(rng.integers(2, 65))
        yield METRICS[i % len(METRICS)], _batch(rng.standard_normal((m, d)), np.zeros(m))


class AttentionTests(SimpleTestCase):
    def test_two_proposals_attend_to_each_other(self):
        weights = attention_weights(_batch([[1.0, 0.2], [-0.3, 2.0]])).weights
        np.testing.assert_array_equal(weights, [[0.0, 1.0], [1.0, 0.0]])

    def test_identical_rows_share_weight(self):
        weights = attention_weights(_batch([[0.4, 0.9]] * 3)).weights
        np.testing.assert_allclose(weights, 0.5 * (1 - np.eye(3)), atol=1e-15)

    def test_worked_example(self):
        weights = attention_weights(_batch([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).weights
        e = np.e
        self.assertAlmostEqual(weights[0, 1], e / (e + 1.0), delta=1e-15)
        self.assertAlmostEqual(weights[0, 2], 1.0 / (e + 1.0), delta=1e-15)

    def test_single_proposal_row_is_zero(self):
        weights = attention_weights(_batch([[1.0, 2.0]])).weights
        np.testing.assert_array_equal(weights, [[0.0]])

    def test_degenerate_row_reported(self):
        with self.assertRaises(DegenerateNorm) as cm:
            attention_weights(_batch([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
        self.assertEqual(cm.exception.params["row"], 1)

    def test_row_stochastic_with_zero_diagonal(self):
        for metric, batch in _random_batches(1000):
            weights = attention_weights(batch, metric).weights
            self.assertTrue(np.all(np.diag(weights) == 0.0))
            self.assertTrue(np.all((weights >= 0.0) & (weights <= 1.0)))
            np.testing.assert_allclose(weights.sum(axis=1), 1.0, rtol=0, atol=1e-9)

    def test_cosine_weights_ignore_row_scale(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.standard_normal((5, 4))
            scaled = x.copy()
            scaled[int(rng.integers(5))] *= rng.uniform(0.1, 10.0)
            np.testing.assert_allclose(
                attention_weights(_batch(scaled)).weights,
                attention_weights(_batch(x)).weights,
                rtol=0,
                atol=1e-12,
            )


class FuseTests(SimpleTestCase):
    def test_alpha_one_is_identity(self):
        batch = _batch(np.random.default_rng(1).standard_normal((6, 3)))
        fused = fuse(batch, FusionConfig(alpha=1.0))
        np.testing.assert_array_equal(fused.embeddings, batch.embeddings)

    def test_identical_rows_are_a_fixed_point(self):
        batch = _batch([[0.3, -0.7, 1.1]] * 4)
        for alpha in (0.5, 0.8):
            fused = fuse(batch, FusionConfig(alpha=alpha))
            np.testing.assert_allclose(fused.embeddings, batch.embeddings, rtol=0, atol=1e-15)

    def test_two_orthogonal_proposals(self):
        fused = fuse(_batch([[1.0, 0.0], [0.0, 1.0]]), FusionConfig(alpha=0.8))
        np.testing.assert_allclose(fused.embeddings, [[0.8, 0.2], [0.2, 0.8]], atol=1e-15)

    def test_single_proposal_unchanged(self):
        batch = _batch([[2.0, -1.0]])
        np.testing.assert_array_equal(fuse(batch, FusionConfig(alpha=0.5)).embeddings, [[2.0, -1.0]])

    def test_labels_preserved(self):
        batch = _batch(np.random.default_rng(4).standard_normal((5, 3)), [2, 0, 1, 1, 0])
        np.testing.assert_array_equal(fuse(batch, FusionConfig()).labels, [2, 0, 1, 1, 0])

    def test_contraction(self):
        for metric, batch in _random_batches(1000, seed=77):
            before = _max_pairwise_distance(batch.embeddings)
            for alpha in (0.5, 0.8):
                fused = fuse(batch, FusionConfig(alpha=alpha, metric=metric))
                self.assertLessEqual(_max_pairwise_distance(fused.embeddings), before + 1e-9)
            identity = fuse(batch, FusionConfig(alpha=1.0, metric=metric))
            np.testing.assert_array_equal(identity.embeddings, batch.embeddings)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        for metric in METRICS:
            batch = _batch(rng.standard_normal((7, 5)))
            order = rng.permutation(7)
            cfg = FusionConfig(alpha=0.7, metric=metric)
            np.testing.assert_allclose(
                fuse(batch.permuted(order), cfg).embeddings,
                fuse(batch, cfg).embeddings[order],
                rtol=0,
                atol=1e-12,
            )


class FuseVjpTests(SimpleTestCase):
    def test_alpha_one_passes_cotangent_through(self):
        rng = np.random.default_rng(6)
        batch = _batch(rng.standard_normal((4, 3)))
        g = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(fuse_vjp(batch, FusionConfig(alpha=1.0), g), g)

    def test_stop_gradient_two_proposals(self):
        batch = _batch([[1.0, 0.5], [-0.2, 0.9]])
        g = np.array([[1.0, 2.0], [3.0, -1.0]])
        cfg = FusionConfig(alpha=0.8, stop_gradient=True)
        expected = np.vstack([0.8 * g[0] + 0.2 * g[1], 0.8 * g[1] + 0.2 * g[0]])
        np.testing.assert_allclose(fuse_vjp(batch, cfg, g), expected, atol=1e-15)

    def test_full_gradient_matches_finite_differences(self):
        for i in range(100):
            label, report = apf_check(np.random.default_rng([9, i]), False, 1e-4)
            self.assertTrue(report.passed, f"{label}: {report.describe()}")

    def test_stop_gradient_matches_frozen_weights(self):
        for i in range(100):
            label, report = apf_check(np.random.default_rng([10, i]), True, 1e-4)
            self.assertTrue(report.passed, f"{label}: {report.describe()}")


class ConfigTests(SimpleTestCase):
    def test_alpha_range(self):
        for alpha in (0.49, 1.01):
            with self.assertRaises(InvalidConfig):
                FusionConfig(alpha=alpha)
        FusionConfig(alpha=0.5)
        FusionConfig(alpha=1.0)

    def test_unknown_metric(self):
        with self.assertRaises(InvalidConfig):
            FusionConfig(metric="manhattan")

    def test_batch_label_range(self):
        with self.assertRaises(InvalidLabel):
            ProposalBatch(np.ones((2, 2)), [0, 3], n_classes=3)
