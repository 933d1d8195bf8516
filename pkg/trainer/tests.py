import dataclasses
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apf.fusion import FusionConfig
from core.exceptions import EmptyDataset, InvalidConfig, InvalidLabel, ShotCountMismatch
from head.classifier import apply_gradients, forward_train
from margin_loss.loss import MarginLossConfig, loss_and_grads
from synthdata.generator import Dataset, DatasetSpec, generate
from trainer.batching import epoch_seed, make_batches
from trainer.stages import StageConfig, TrainLog, adapt_head, base_train, few_shot_adapt

SEPARATED = DatasetSpec(
    d=4,
    n_base=2,
    n_novel=1,
    samples_per_base=50,
    k=5,
    intra_sigma=0.05,
    min_angle_deg=60.0,
    background_rate=0.0,
    eval_per_class=10,
    seed=0,
)


def _base_cfg(**kwargs):
    kwargs.setdefault("epochs", 20)
    kwargs.setdefault("batch_size", 10)
    kwargs.setdefault("learning_rate", 0.05)
    kwargs.setdefault("feature_dim", 4)
    return StageConfig.base(**kwargs)


def _labelled(counts, d=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, label) for label, n in enumerate(counts)])
    return Dataset(rng.standard_normal((labels.size, d)), labels)


class MakeBatchesTests(SimpleTestCase):
    def test_chunk_sizes(self):
        batches = make_batches(_labelled([10]), 4, seed=0)
        self.assertEqual([b.M for b in batches], [4, 4, 2])

    def test_same_seed_same_batches(self):
        dataset = _labelled([6, 4])
        first, second = make_batches(dataset, 3, seed=5), make_batches(dataset, 3, seed=5)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.embeddings, b.embeddings)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_plain_mode_is_a_permutation(self):
        dataset = _labelled([7, 5])
        rows = np.vstack([b.embeddings for b in make_batches(dataset, 5, seed=1)])
        self.assertEqual(sorted(map(bytes, rows)), sorted(map(bytes, dataset.embeddings)))

    def test_balanced_counts_are_uniform(self):
        dataset = _labelled([50, 5, 5])
        counts = np.zeros(3)
        for seed in range(1000):
            for batch in make_batches(dataset, 60, seed=seed, balanced=True):
                counts += np.bincount(batch.labels, minlength=3)
        expected = counts.sum() / 3
        chi_square = float(np.sum((counts - expected) ** 2 / expected))
        # 99.9th percentile of chi-square with 2 degrees of freedom.
        self.assertLess(chi_square, 13.82)

    def test_background_mapped_to_head_row(self):
        dataset = Dataset(np.eye(3), [0, -1, 1])
        (batch,) = make_batches(dataset, 3, seed=0, background_index=2, n_classes=3)
        self.assertEqual(sorted(batch.labels.tolist()), [0, 1, 2])


class StageConfigTests(SimpleTestCase):
    def test_rejects_zero_epochs(self):
        with self.assertRaises(InvalidConfig):
            StageConfig.base(epochs=0)

    def test_fusion_needs_partners(self):
        with self.assertRaises(InvalidConfig):
            StageConfig(batch_size=1, fusion=FusionConfig(alpha=0.8))
        StageConfig(batch_size=1, fusion=FusionConfig.disabled())

    def test_audit(self):
        audit = StageConfig().audit()
        self.assertEqual((audit["alpha"], audit["margin"], audit["metric"]), (0.8, 0.2, "cosine"))


class BaseTrainTests(SimpleTestCase):
    def setUp(self):
        self.base, self.kshot, self.evaluation = generate(SEPARATED)

    def test_separated_classes_are_learned(self):
        _, log = base_train(self.base, _base_cfg())
        self.assertGreaterEqual(log.final.base_acc, 0.95)
        self.assertEqual([r.epoch for r in log.records], list(range(1, 21)))

    def test_same_seed_bit_identical(self):
        first, _ = base_train(self.base, _base_cfg(epochs=3))
        second, _ = base_train(self.base, _base_cfg(epochs=3))
        np.testing.assert_array_equal(first.parameter_vector(), second.parameter_vector())

    def test_mechanisms_forced_off(self):
        cfg = _base_cfg(
            epochs=1,
            fusion=FusionConfig(alpha=0.6),
            loss_cfg=MarginLossConfig(m=0.5),
        )
        with self.assertLogs("agcm.training", level="INFO") as logs:
            head, _ = base_train(self.base, cfg)
        self.assertEqual(head.fusion.alpha, 1.0)
        self.assertEqual(head.loss_cfg.m, 0.0)
        stage_lines = [line for line in logs.output if "stage:" in line]
        self.assertEqual(len(stage_lines), 1)
        self.assertIn('"alpha": 1.0', stage_lines[0])
        self.assertIn('"margin": 0.0', stage_lines[0])

    def test_rejects_novel_labels(self):
        with self.assertRaises(InvalidLabel):
            base_train(self.kshot, _base_cfg(epochs=1))

    def test_rejects_empty(self):
        empty = Dataset(np.zeros((0, 4)), np.zeros(0), spec=SEPARATED)
        with self.assertRaises(EmptyDataset):
            base_train(empty, _base_cfg())

    def test_wrong_stage(self):
        with self.assertRaises(InvalidConfig):
            base_train(self.base, StageConfig())


class FewShotAdaptTests(SimpleTestCase):
    def test_weight_matrix_grows(self):
        spec = DatasetSpec(d=8, n_base=7, n_novel=3, samples_per_base=12, k=10, eval_per_class=2)
        base, kshot, _ = generate(spec)
        head, _ = base_train(base, StageConfig.base(epochs=1, feature_dim=8))
        self.assertEqual(head.n_classes, 8)
        adapted, _ = few_shot_adapt(head, kshot, StageConfig(epochs=1, batch_size=8))
        self.assertEqual(adapted.n_classes, 11)
        self.assertEqual(adapted.background_index, 10)

    def test_shot_count_checked(self):
        base, kshot, _ = generate(SEPARATED)
        head, _ = base_train(base, _base_cfg(epochs=1))
        keep = np.flatnonzero(kshot.labels != 2).tolist() + np.flatnonzero(kshot.labels == 2)[:-1].tolist()
        short = kshot.subset(keep)
        with self.assertRaises(ShotCountMismatch):
            few_shot_adapt(head, short, StageConfig(epochs=1), k=5)

    def test_disabled_mechanisms_match_naive_fine_tuning(self):
        base, kshot, _ = generate(SEPARATED)
        head, _ = base_train(base, _base_cfg(epochs=5))
        cfg = StageConfig(
            epochs=4,
            batch_size=4,
            learning_rate=0.01,
            seed=3,
            fusion=FusionConfig.disabled(),
            loss_cfg=MarginLossConfig.plain(),
        )
        _, log = few_shot_adapt(head, kshot, cfg)

        # Naive fine-tuning: plain cosine softmax on the expanded head, frozen projection.
        naive = adapt_head(head, 3, cfg)
        losses = []
        for epoch in range(1, cfg.epochs + 1):
            batches = make_batches(
                kshot,
                cfg.batch_size,
                epoch_seed(cfg.seed, epoch),
                balanced=True,
                background_index=naive.background_index,
                n_classes=naive.n_classes,
            )
            for batch in batches:
                features = batch.embeddings @ naive.projection + naive.bias
                loss, _, grad_weights = loss_and_grads(
                    features, naive.class_weights, batch.labels, MarginLossConfig.plain(background_index=naive.background_index)
                )
                naive = dataclasses.replace(
                    naive, class_weights=naive.class_weights - cfg.learning_rate * grad_weights
                )
                losses.append(loss)
        np.testing.assert_allclose(log.step_losses, losses, rtol=0, atol=1e-9)

    def test_full_batch_loss_non_increasing(self):
        base, kshot, _ = generate(SEPARATED)
        head, _ = base_train(base, _base_cfg(epochs=5))
        cfg = StageConfig(epochs=15, batch_size=len(kshot), learning_rate=1e-3, balanced=False)
        _, log = few_shot_adapt(head, kshot, cfg)
        losses = [record.loss for record in log.records]
        for before, after in zip(losses, losses[1:]):
            self.assertLessEqual(after, before + 1e-12)

    def test_wrong_stage(self):
        base, kshot, _ = generate(SEPARATED)
        head, _ = base_train(base, _base_cfg(epochs=1))
        with self.assertRaises(InvalidConfig):
            few_shot_adapt(head, kshot, _base_cfg())


class TrainLogTests(SimpleTestCase):
    def test_csv_round_trip(self):
        base, _, _ = generate(SEPARATED)
        _, log = base_train(base, _base_cfg(epochs=3))
        with tempfile.TemporaryDirectory() as tmp:
            loaded = TrainLog.load_csv(log.save_csv(Path(tmp) / "log.csv"), stage="base")
        self.assertEqual(loaded.records, log.records)
