import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import EmptyClass, EmptyMatrix, ForgettingUndefined
from head.classifier import ClassifierHead
from metrics.evaluation import (
    ConfusionMatrix,
    cluster_stats,
    confusion,
    confusion_from_predictions,
    confusion_percentage,
    evaluate,
    forgetting,
    group_accuracies,
)
from synthdata.generator import DatasetSpec, class_means, generate

SPEC = DatasetSpec(
    d=8,
    n_base=3,
    n_novel=1,
    samples_per_base=10,
    k=5,
    intra_sigma=0.05,
    min_angle_deg=60.0,
    background_rate=0.1,
    eval_per_class=20,
    seed=4,
)


def _oracle_head(spec):
    """Identity projection with the true class means as weight rows."""
    means = class_means(spec, np.random.default_rng(spec.seed))
    basis, _ = np.linalg.qr(means.T)
    background = np.ones(spec.d) - basis @ (basis.T @ np.ones(spec.d))
    weights = np.vstack([means, background / np.linalg.norm(background)])
    return ClassifierHead(np.eye(spec.d), np.zeros(spec.d), weights, background_index=spec.n_classes)


class ConfusionPercentageTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(confusion_percentage(ConfusionMatrix(np.diag([4, 2, 7]), ("a", "b", "c"))), 0.0)
        self.assertEqual(confusion_percentage(ConfusionMatrix(np.array([[0, 3], [5, 0]]), ("a", "b"))), 100.0)
        self.assertEqual(confusion_percentage(ConfusionMatrix(np.array([[3, 1], [1, 3]]), ("a", "b"))), 25.0)

    def test_zero_iff_diagonal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            counts = rng.integers(0, 5, size=(4, 4))
            counts[np.diag_indices(4)] += 1
            cm = ConfusionMatrix(counts, tuple("abcd"))
            off_diagonal = counts.sum() - np.trace(counts)
            self.assertEqual(confusion_percentage(cm) == 0.0, off_diagonal == 0)

    def test_empty(self):
        with self.assertRaises(EmptyMatrix):
            confusion_percentage(ConfusionMatrix(np.zeros((2, 2), dtype=np.int64), ("a", "b")))


class ForgettingTests(SimpleTestCase):
    def test_reference_drops(self):
        for after, expected in ((51.5, 18.8), (47.8, 24.6), (45.5, 28.2)):
            report = forgetting(63.4, after, 58.0)
            self.assertAlmostEqual(report.percent_drop, expected, delta=0.05)
        self.assertAlmostEqual(forgetting(63.4, 51.5, 58.0).percent_drop, 18.77, delta=0.005)

    def test_no_drop(self):
        self.assertEqual(forgetting(0.7, 0.7, 0.1).percent_drop, 0.0)

    def test_undefined(self):
        with self.assertRaises(ForgettingUndefined):
            forgetting(0.0, 0.5, 0.5)


class ClusterStatsTests(SimpleTestCase):
    def test_points_at_centroids(self):
        embeddings = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        stats = cluster_stats(embeddings, [0, 0, 1])
        self.assertEqual(stats.intra_variance, {0: 0.0, 1: 0.0})

    def test_orthogonal_singletons(self):
        stats = cluster_stats(np.array([[1.0, 0.0], [0.0, 3.0]]), [0, 1])
        self.assertAlmostEqual(stats.min_angle_deg, 90.0, delta=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        embeddings = rng.standard_normal((40, 5)) + np.repeat(np.eye(5)[:4] * 3, 10, axis=0)
        labels = np.repeat(np.arange(4), 10)
        stats = cluster_stats(embeddings, labels)
        centroids = []
        for label in range(4):
            members = embeddings[labels == label]
            centroid = members.sum(axis=0) / len(members)
            centroids.append(centroid)
            variance = sum(float((row - centroid) @ (row - centroid)) for row in members) / len(members)
            self.assertAlmostEqual(stats.intra_variance[label], variance, delta=1e-10)
        angles = [
            np.degrees(np.arccos(a @ b / (np.linalg.norm(a) * np.linalg.norm(b))))
            for i, a in enumerate(centroids)
            for b in centroids[i + 1 :]
        ]
        self.assertAlmostEqual(stats.min_angle_deg, min(angles), delta=1e-10)

    def test_needs_two_classes(self):
        with self.assertRaises(EmptyClass):
            cluster_stats(np.ones((3, 2)), [1, 1, 1])


class ConfusionTests(SimpleTestCase):
    def setUp(self):
        _, _, self.evaluation = generate(SPEC)
        self.head = _oracle_head(SPEC)

    def test_oracle_head_is_near_diagonal(self):
        cm = confusion(self.head, self.evaluation)
        real = cm.counts[: SPEC.n_classes, : SPEC.n_classes]
        self.assertGreaterEqual(np.trace(real) / real.sum(), 0.95)

    def test_row_sums_equal_class_counts(self):
        cm = confusion(self.head, self.evaluation)
        expected = [SPEC.eval_per_class] * SPEC.n_classes + [self.evaluation.class_counts()[-1]]
        np.testing.assert_array_equal(cm.counts.sum(axis=1), expected)
        self.assertEqual(cm.class_names[-1], "background")

    def test_single_predicted_column(self):
        cm = confusion_from_predictions([0, 1, 2, 2, 1], [0, 0, 0, 0, 0], 3)
        self.assertEqual(int(np.count_nonzero(cm.counts.sum(axis=0))), 1)
        self.assertEqual(int(cm.counts[:, 0].sum()), 5)

    def test_sharded_counts_match(self):
        serial = confusion(self.head, self.evaluation, jobs=1)
        sharded = confusion(self.head, self.evaluation, jobs=4)
        np.testing.assert_array_equal(serial.counts, sharded.counts)

    def test_csv_round_trip(self):
        cm = confusion(self.head, self.evaluation)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = ConfusionMatrix.load_csv(cm.save_csv(Path(tmp) / "confusion.csv"))
        np.testing.assert_array_equal(loaded.counts, cm.counts)
        self.assertEqual(loaded.class_names, cm.class_names)

    def test_group_accuracies(self):
        base_acc, novel_acc = group_accuracies(self.head, self.evaluation, SPEC.n_base)
        report = evaluate(self.head, self.evaluation, SPEC.n_base)
        self.assertAlmostEqual(report.base_acc, base_acc, delta=1e-12)
        self.assertAlmostEqual(report.novel_acc, novel_acc, delta=1e-12)
        self.assertGreaterEqual(report.confusion_pct, 0.0)
        self.assertLessEqual(report.confusion_pct, 100.0)

    def test_empty_group_is_zero(self):
        base_only = self.evaluation.subset(np.flatnonzero(self.evaluation.labels < SPEC.n_base))
        _, novel_acc = group_accuracies(self.head, base_only, SPEC.n_base)
        self.assertEqual(novel_acc, 0.0)
