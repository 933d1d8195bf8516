import itertools
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import DatasetFormatError, InfeasibleSeparation, InvalidConfig, ShotCountMismatch
from synthdata.generator import (
    BACKGROUND_LABEL,
    Dataset,
    DatasetSpec,
    check_shots,
    class_means,
    generate,
    kshot_sample,
)
from synthdata.storage import load_csv, save_csv

SMALL = dict(d=8, n_base=4, n_novel=2, samples_per_base=30, k=5, eval_per_class=10)


def _angle(u, v):
    return float(np.degrees(np.arccos(np.clip(u @ v, -1.0, 1.0))))


class DatasetSpecTests(SimpleTestCase):
    def test_rejects_invalid_values(self):
        for kwargs in (
            {"n_base": 0},
            {"k": 0},
            {"intra_sigma": 0.0},
            {"min_angle_deg": 0.0},
            {"min_angle_deg": 95.0},
            {"confusable_pairs": ((1, 1, 10.0),)},
            {"confusable_pairs": ((0, 1, 10.0), (1, 2, 10.0))},
        ):
            with self.assertRaises(InvalidConfig):
                DatasetSpec(**kwargs)

    def test_infeasible_separation(self):
        spec = DatasetSpec(d=2, n_base=10, n_novel=0, min_angle_deg=90.0)
        with self.assertRaises(InfeasibleSeparation):
            generate(spec)


class GenerateTests(SimpleTestCase):
    def test_base_row_count(self):
        spec = DatasetSpec(d=4, n_base=2, n_novel=0, samples_per_base=10, k=3, background_rate=0.0)
        base, kshot, evaluation = generate(spec)
        self.assertEqual(len(base), 20)
        self.assertEqual(base.class_counts(), {0: 10, 1: 10})

    def test_background_rate(self):
        base, _, _ = generate(DatasetSpec(**SMALL, background_rate=0.1))
        self.assertEqual(base.class_counts()[BACKGROUND_LABEL], 12)

    def test_deterministic(self):
        spec = DatasetSpec(**SMALL, confusable_pairs=((1, 4, 12.0),), seed=3)
        for first, second in zip(generate(spec), generate(spec)):
            self.assertTrue(first.equals(second))

    def test_separation_contract(self):
        for seed in range(5):
            spec = DatasetSpec(**SMALL, min_angle_deg=30.0, confusable_pairs=((2, 5, 12.0),), seed=seed)
            means = class_means(spec, np.random.default_rng(seed))
            for a, b in itertools.combinations(range(spec.n_classes), 2):
                angle = _angle(means[a], means[b])
                if (a, b) == (2, 5):
                    self.assertAlmostEqual(angle, 12.0, delta=1e-6)
                else:
                    self.assertGreaterEqual(angle, 30.0 - 1e-6)

    def test_kshot_has_k_per_class(self):
        spec = DatasetSpec(**SMALL)
        _, kshot, evaluation = generate(spec)
        check_shots(kshot, spec.k, spec.n_classes)
        self.assertEqual(evaluation.class_counts()[0], spec.eval_per_class)

    def test_kshot_and_eval_disjoint(self):
        _, kshot, evaluation = generate(DatasetSpec(**SMALL))
        kshot_rows = {row.tobytes() for row in kshot.embeddings}
        self.assertFalse(any(row.tobytes() in kshot_rows for row in evaluation.embeddings))

    def test_samples_near_unit_sphere(self):
        base, _, _ = generate(DatasetSpec(**SMALL))
        np.testing.assert_allclose(np.linalg.norm(base.embeddings, axis=1), 1.0, atol=1e-12)


class KShotTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.dataset = Dataset(
            rng.standard_normal((26, 3)), np.array([0] * 10 + [1] * 6 + [2] * 8 + [-1] * 2)
        )

    def test_whole_class_when_k_equals_size(self):
        subset = kshot_sample(self.dataset, 6, seed=1)
        np.testing.assert_array_equal(
            subset.embeddings[subset.labels == 1], self.dataset.embeddings[self.dataset.labels == 1]
        )

    def test_seeded_subset(self):
        self.assertTrue(kshot_sample(self.dataset, 4, 7).equals(kshot_sample(self.dataset, 4, 7)))

    def test_subset_rows_come_from_source(self):
        subset = kshot_sample(self.dataset, 5, seed=2)
        source = {(int(label), row.tobytes()) for label, row in zip(self.dataset.labels, self.dataset.embeddings)}
        for label, row in zip(subset.labels, subset.embeddings):
            self.assertIn((int(label), row.tobytes()), source)
        self.assertEqual(len({row.tobytes() for row in subset.embeddings}), len(subset))

    def test_too_few_samples(self):
        with self.assertRaises(ShotCountMismatch) as cm:
            kshot_sample(self.dataset, 7, seed=0)
        self.assertEqual(cm.exception.params["label"], 1)

    def test_check_shots(self):
        with self.assertRaises(ShotCountMismatch):
            check_shots(self.dataset, 6, 3)


class CsvTests(SimpleTestCase):
    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 3)), np.zeros(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_csv(empty, Path(tmp) / "empty.csv")
            self.assertEqual(path.read_text(), "label,x0,x1,x2\n")
            self.assertTrue(load_csv(path).equals(empty))

    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            for seed in range(50):
                rng = np.random.default_rng(seed)
                n, d = int(rng.integers(1, 20)), int(rng.integers(1, 9))
                dataset = Dataset(
                    rng.standard_normal((n, d)) * 10.0 ** rng.uniform(-5, 5),
                    rng.integers(-1, 5, size=n),
                )
                loaded = load_csv(save_csv(dataset, Path(tmp) / f"{seed}.csv"))
                np.testing.assert_array_equal(loaded.labels, dataset.labels)
                np.testing.assert_array_equal(loaded.embeddings, dataset.embeddings)

    def test_malformed_row_cites_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.csv"
            path.write_text("label,x0,x1\n0,1.0,2.0\n1,3.0\n")
            with self.assertRaises(DatasetFormatError) as cm:
                load_csv(path)
            self.assertEqual(cm.exception.params["line"], 3)
            self.assertIn("line 3", str(cm.exception))

    def test_bad_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.csv"
            path.write_text("class,x0\n0,1.0\n")
            with self.assertRaises(DatasetFormatError):
                load_csv(path)

    def test_invalid_utf8_cites_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bytes.csv"
            path.write_bytes(b"label,x0\n0,1.0\n\xff\xfe,2.0\n")
            with self.assertRaises(DatasetFormatError) as cm:
                load_csv(path)
            self.assertEqual(cm.exception.params["line"], 3)

            path.write_bytes(b"\xff\xfe")
            with self.assertRaises(DatasetFormatError) as cm:
                load_csv(path)
            self.assertEqual(cm.exception.params["line"], 1)
