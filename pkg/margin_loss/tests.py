import math

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import EmptyBatch, InvalidConfig, InvalidLabel
from core.gradsuite import margin_check
from margin_loss.loss import (
    CosineTable,
    MarginLossConfig,
    class_cosines,
    loss_and_grads,
    loss_forward,
    margin_logits,
    per_sample_terms,
)

MARGIN_GRID = (0.0, 0.1, 0.2, 0.4, 0.8, 1.0)


def _instance(seed, background=True):
    rng = np.random.default_rng(seed)
    m, n, d = int(rng.integers(2, 9)), int(rng.integers(2, 7)), int(rng.integers(2, 8))
    features = rng.standard_normal((m, d))
    weights = rng.standard_normal((n, d))
    high = n if background else n - 1
    labels = rng.integers(high, size=m)
    return features, weights, labels


def _direct_loss(features, weights, labels, m, beta, background_index):
    """Literal per-sample summation."""
    total = 0.0
    for z, y in zip(features, labels):
        logits = []
        for j, w in enumerate(weights):
            cos = float(np.dot(z, w) / (np.linalg.norm(z) * np.linalg.norm(w)))
            if j == y and y != background_index:
                cos -= m
            logits.append(beta * cos)
        peak = max(logits)
        lse = peak + math.log(sum(math.exp(v - peak) for v in logits))
        total += logits[y] - lse
    return -total / len(labels)


def _plain_cross_entropy(features, weights, labels, beta):
    unit_f = features / np.linalg.norm(features, axis=1, keepdims=True)
    unit_w = weights / np.linalg.norm(weights, axis=1, keepdims=True)
    logits = beta * (unit_f @ unit_w.T)
    logits -= logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())


class ConfigTests(SimpleTestCase):
    def test_defaults(self):
        cfg = MarginLossConfig()
        self.assertEqual((cfg.m, cfg.beta), (0.2, 20.0))

    def test_rejects_bad_values(self):
        for kwargs in ({"beta": 0.0}, {"beta": -1.0}, {"m": 1.5}, {"m": -1.2}):
            with self.assertRaises(InvalidConfig):
                MarginLossConfig(**kwargs)

    def test_negative_margin_allowed(self):
        self.assertEqual(MarginLossConfig(m=-0.3).m, -0.3)


class CosineTableTests(SimpleTestCase):
    def test_self_similarity(self):
        weights = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_allclose(np.diag(class_cosines(weights, weights).values), 1.0, atol=1e-15)

    def test_examples(self):
        self.assertEqual(class_cosines([[1.0, 0.0]], [[0.0, 3.0]]).values[0, 0], 0.0)
        self.assertAlmostEqual(class_cosines([[1.0, 2.0]], [[2.0, 1.0]]).values[0, 0], 0.8, delta=1e-15)


class MarginLogitsTests(SimpleTestCase):
    def test_zero_margin_is_scaled_cosines(self):
        cosines = np.array([[0.1, -0.4, 0.9], [0.3, 0.3, -1.0]])
        logits = margin_logits(cosines, [2, 0], MarginLossConfig(m=0.0, beta=20.0))
        np.testing.assert_array_equal(logits, 20.0 * cosines)

    def test_target_logit(self):
        cosines = CosineTable(np.array([[0.9, 0.1, 0.0]]))
        cfg = MarginLossConfig(m=0.2, beta=20.0, background_index=2)
        logits = margin_logits(cosines, [0], cfg)
        self.assertAlmostEqual(logits[0, 0], 14.0, delta=1e-12)
        self.assertAlmostEqual(logits[0, 1], 2.0, delta=1e-12)

    def test_background_row_unmodified(self):
        cosines = np.array([[0.2, 0.5, 0.7]])
        cfg = MarginLossConfig(m=0.4, beta=20.0, background_index=2)
        np.testing.assert_array_equal(margin_logits(cosines, [2], cfg), 20.0 * cosines)


class LossForwardTests(SimpleTestCase):
    def test_uniform_cosines(self):
        weights = np.eye(3)
        features = np.ones((2, 3))
        loss = loss_forward(features, weights, [0, 2], MarginLossConfig(m=0.0))
        self.assertAlmostEqual(loss, math.log(3.0), delta=1e-12)

    def test_saturated_two_class(self):
        features = np.array([[1.0, 0.0]])
        weights = np.array([[1.0, 0.0], [-1.0, 0.0]])
        cfg = MarginLossConfig(m=0.0, beta=20.0)
        self.assertLess(abs(loss_forward(features, weights, [0], cfg) - 4.25e-18), 1e-17)
        _, grad_features, grad_weights = loss_and_grads(features, weights, [0], cfg)
        self.assertLessEqual(np.max(np.abs(grad_features)), 1e-15)
        self.assertLessEqual(np.max(np.abs(grad_weights)), 1e-15)

    def test_matches_direct_summation(self):
        for seed in range(20):
            features, weights, labels = _instance(seed)
            bg = weights.shape[0] - 1
            cfg = MarginLossConfig(m=0.2, beta=20.0, background_index=bg)
            self.assertAlmostEqual(
                loss_forward(features, weights, labels, cfg),
                _direct_loss(features, weights, labels, 0.2, 20.0, bg),
                delta=1e-10,
            )

    def test_zero_margin_is_plain_cross_entropy(self):
        for seed in range(100):
            features, weights, labels = _instance(seed)
            cfg = MarginLossConfig(m=0.0, beta=20.0, background_index=weights.shape[0] - 1)
            self.assertAlmostEqual(
                loss_forward(features, weights, labels, cfg),
                _plain_cross_entropy(features, weights, labels, 20.0),
                delta=1e-9,
            )

    def test_monotone_in_margin(self):
        for seed in range(100):
            features, weights, labels = _instance(seed, background=False)
            bg = weights.shape[0] - 1
            losses = [
                loss_forward(features, weights, labels, MarginLossConfig(m=m, background_index=bg))
                for m in MARGIN_GRID
            ]
            for lower, higher in zip(losses, losses[1:]):
                self.assertGreater(higher, lower)

    def test_background_terms_ignore_margin(self):
        for seed in range(20):
            features, weights, labels = _instance(seed)
            bg = weights.shape[0] - 1
            labels[0] = bg
            rows = labels == bg
            reference = per_sample_terms(
                features, weights, labels, MarginLossConfig(m=0.0, background_index=bg)
            )[rows]
            for m in MARGIN_GRID[1:]:
                terms = per_sample_terms(
                    features, weights, labels, MarginLossConfig(m=m, background_index=bg)
                )
                np.testing.assert_array_equal(terms[rows], reference)

    def test_scale_invariance(self):
        rng = np.random.default_rng(31)
        for seed in range(20):
            features, weights, labels = _instance(seed)
            cfg = MarginLossConfig(background_index=weights.shape[0] - 1)
            scaled_f = features * rng.uniform(0.1, 10.0, size=(features.shape[0], 1))
            scaled_w = weights * rng.uniform(0.1, 10.0, size=(weights.shape[0], 1))
            self.assertAlmostEqual(
                loss_forward(features, weights, labels, cfg),
                loss_forward(scaled_f, scaled_w, labels, cfg),
                delta=1e-9,
            )

    def test_empty_batch(self):
        with self.assertRaises(EmptyBatch):
            loss_forward(np.zeros((0, 3)), np.eye(3), [], MarginLossConfig())

    def test_label_out_of_range(self):
        with self.assertRaises(InvalidLabel):
            loss_forward(np.ones((1, 3)), np.eye(3), [3], MarginLossConfig())


class LossGradientTests(SimpleTestCase):
    def test_matches_finite_differences(self):
        for i in range(100):
            label, report = margin_check(np.random.default_rng([17, i]), 1e-4)
            self.assertTrue(report.passed, f"{label}: {report.describe()}")

    def test_uniform_cosine_feature_gradient(self):
        weights = np.eye(3)
        features = np.array([[1.0, 1.0, 1.0]])
        cfg = MarginLossConfig(m=0.0, beta=20.0)
        _, grad_features, _ = loss_and_grads(features, weights, [0], cfg)
        # Tangent to the feature direction.
        self.assertAlmostEqual(float(grad_features[0] @ features[0]), 0.0, delta=1e-12)
        # p = 1/3 everywhere: dL/dcos = beta * (p - onehot); pulled back through normalize.
        unit = features[0] / np.sqrt(3.0)
        g = 20.0 * (np.full(3, 1.0 / 3.0) - np.array([1.0, 0.0, 0.0])) @ weights
        expected = (g - unit * (unit @ g)) / np.sqrt(3.0)
        np.testing.assert_allclose(grad_features[0], expected, atol=1e-12)
