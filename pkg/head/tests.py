import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apf.fusion import FusionConfig, ProposalBatch, fuse
from core.exceptions import CheckpointFormatError, InvalidConfig, ShapeMismatch
from core.gradsuite import head_check
from head.checkpoint import dumps_head, load_head, loads_head, save_head, sidecar_path
from head.classifier import (
    ClassifierHead,
    HeadGradients,
    apply_gradients,
    expand_classes,
    forward_train,
    init_head,
    predict,
    predict_batch,
    project,
    score,
)
from margin_loss.loss import MarginLossConfig, class_cosines


def _plain_head(d=3, n_classes=3, seed=0, **kwargs):
    return init_head(
        d, d, n_classes, seed, fusion=FusionConfig.disabled(), loss_cfg=MarginLossConfig.plain(), **kwargs
    )


def _identity_head(class_weights):
    class_weights = np.asarray(class_weights, dtype=np.float64)
    d = class_weights.shape[1]
    return ClassifierHead(
        projection=np.eye(d),
        bias=np.zeros(d),
        class_weights=class_weights,
        background_index=class_weights.shape[0] - 1,
    )


def _batch(seed, m=4, d=3, n_classes=3):
    rng = np.random.default_rng(seed)
    return ProposalBatch(rng.standard_normal((m, d)), rng.integers(n_classes, size=m), n_classes)


def _independent_loss(head, batch, beta=20.0):
    z = batch.embeddings @ head.projection + head.bias
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    w = head.class_weights / np.linalg.norm(head.class_weights, axis=1, keepdims=True)
    logits = beta * z @ w.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(batch.M), batch.labels].mean())


class HeadConstructionTests(SimpleTestCase):
    def test_init_is_seeded(self):
        a, b = init_head(5, 4, 3, seed=9), init_head(5, 4, 3, seed=9)
        np.testing.assert_array_equal(a.parameter_vector(), b.parameter_vector())
        self.assertEqual(a.background_index, 2)
        np.testing.assert_allclose(np.linalg.norm(a.class_weights, axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(np.abs(a.projection) <= 1.0 / np.sqrt(5)))

    def test_needs_two_rows(self):
        with self.assertRaises(InvalidConfig):
            _identity_head([[1.0, 0.0]])

    def test_loss_config_follows_background(self):
        head = init_head(3, 3, 4, seed=0)
        self.assertEqual(head.loss_cfg.background_index, 3)

    def test_expand_classes_keeps_background_last(self):
        head = init_head(4, 4, 8, seed=1)
        expanded = expand_classes(head, 3, seed=1)
        self.assertEqual(expanded.n_classes, 11)
        self.assertEqual(expanded.background_index, 10)
        self.assertEqual(expanded.loss_cfg.background_index, 10)
        np.testing.assert_array_equal(expanded.class_weights[:7], head.class_weights[:7])
        np.testing.assert_array_equal(expanded.class_weights[10], head.class_weights[7])


class ForwardTrainTests(SimpleTestCase):
    def test_mechanisms_off_match_plain_cross_entropy(self):
        for seed in range(20):
            head = _plain_head(seed=seed)
            batch = _batch(seed)
            loss, _ = forward_train(head, batch)
            self.assertAlmostEqual(loss, _independent_loss(head, batch), delta=1e-9)

    def test_duplicated_batch_same_loss(self):
        head = _plain_head(seed=3)
        batch = _batch(3)
        doubled = ProposalBatch(
            np.vstack([batch.embeddings, batch.embeddings]),
            np.concatenate([batch.labels, batch.labels]),
            3,
        )
        self.assertAlmostEqual(forward_train(head, batch)[0], forward_train(head, doubled)[0], delta=1e-12)

    def test_gradient_matches_finite_differences(self):
        for i in range(100):
            label, report = head_check(np.random.default_rng([23, i]), 23, i, 1e-4)
            self.assertTrue(report.passed, f"{label}: {report.describe()}")


class PredictTests(SimpleTestCase):
    def test_projection_equal_to_class_row(self):
        weights = np.array([[1.0, 0.0, 0.0], [0.0, 0.6, 0.8], [0.0, -1.0, 0.0]])
        prediction = predict(_identity_head(weights), weights[1])
        self.assertEqual(prediction.class_id, 1)
        self.assertAlmostEqual(prediction.score, 1.0, delta=1e-12)

    def test_orthogonal_query_breaks_tie_at_zero(self):
        weights = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
        prediction = predict(_identity_head(weights), [0.0, 0.0, 2.0])
        self.assertEqual(prediction.class_id, 0)
        self.assertEqual(prediction.score, 0.0)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(14)
        for seed in range(20):
            head = init_head(6, 4, 5, seed=seed)
            x = rng.standard_normal(6)
            z = x @ head.projection + head.bias
            cosines = [
                float(z @ w / (np.linalg.norm(z) * np.linalg.norm(w))) for w in head.class_weights
            ]
            self.assertEqual(predict(head, x).class_id, int(np.argmax(cosines)))

    def test_scale_invariance_without_bias(self):
        rng = np.random.default_rng(15)
        head = init_head(5, 4, 6, seed=2)
        head = ClassifierHead(head.projection, np.zeros(4), head.class_weights, head.background_index)
        queries = rng.standard_normal((50, 5))
        np.testing.assert_array_equal(
            predict_batch(head, queries), predict_batch(head, 7.5 * queries)
        )

    def test_fused_evaluation_uses_context(self):
        head = _plain_head(d=3, seed=4).with_configs(fusion=FusionConfig(alpha=0.5))
        context = _batch(5, m=6)
        query = np.array([0.2, -0.1, 0.9])
        stacked = np.vstack([project(head, query[None, :]), project(head, context.embeddings)])
        fused = fuse(ProposalBatch(stacked, np.zeros(7)), head.fusion).embeddings[0]
        expected = class_cosines(fused[None, :], head.class_weights).values[0]
        np.testing.assert_allclose(score(head, query, fuse_at_eval=True, context=context)[0], expected)
        np.testing.assert_allclose(
            score(head, query, fuse_at_eval=False, context=context)[0],
            class_cosines(project(head, query[None, :]), head.class_weights).values[0],
        )

    def test_wrong_dimension(self):
        with self.assertRaises(ShapeMismatch):
            predict(init_head(3, 3, 3, seed=0), [1.0, 2.0])


class ApplyGradientsTests(SimpleTestCase):
    def _zero(self, head):
        return HeadGradients(
            np.zeros_like(head.projection), np.zeros_like(head.bias), np.zeros_like(head.class_weights)
        )

    def test_zero_gradient_and_zero_rate(self):
        head = init_head(4, 3, 3, seed=5)
        _, grads = forward_train(head, _batch(5, d=4))
        for updated in (apply_gradients(head, self._zero(head), 0.1), apply_gradients(head, grads, 0.0)):
            np.testing.assert_array_equal(updated.parameter_vector(), head.parameter_vector())

    def test_step_decreases_loss(self):
        head = init_head(4, 3, 3, seed=6)
        batch = _batch(6, d=4)
        loss, grads = forward_train(head, batch)
        self.assertLess(forward_train(apply_gradients(head, grads, 1e-3), batch)[0], loss)

    def test_shape_mismatch(self):
        head = init_head(4, 3, 3, seed=5)
        bad = HeadGradients(np.zeros((3, 3)), np.zeros(3), np.zeros((3, 3)))
        with self.assertRaises(ShapeMismatch):
            apply_gradients(head, bad, 0.1)

    def test_deterministic_updates(self):
        def train():
            head = init_head(4, 3, 3, seed=8)
            for step in range(10):
                _, grads = forward_train(head, _batch(step, d=4))
                head = apply_gradients(head, grads, 0.01)
            return head.parameter_vector()

        np.testing.assert_array_equal(train(), train())


class CheckpointTests(SimpleTestCase):
    def test_round_trip(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            head = init_head(
                int(rng.integers(1, 6)),
                int(rng.integers(1, 6)),
                int(rng.integers(2, 6)),
                seed=seed,
                fusion=FusionConfig(alpha=0.7, metric="pearson", stop_gradient=True),
                loss_cfg=MarginLossConfig(m=-0.1, beta=12.5),
            )
            loaded = loads_head(dumps_head(head))
            np.testing.assert_array_equal(loaded.parameter_vector(), head.parameter_vector())
            self.assertEqual(loaded.background_index, head.background_index)
            self.assertEqual(loaded.fusion, head.fusion)
            self.assertEqual(loaded.loss_cfg, head.loss_cfg)

    def test_file_and_sidecar(self):
        head = init_head(3, 2, 4, seed=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_head(head, Path(tmp) / "nested" / "head.bin")
            self.assertEqual(path.read_bytes()[:8], b"AGCMHEAD")
            header = json.loads(sidecar_path(path).read_text())
            self.assertEqual(header["n_classes"], 4)
            self.assertEqual(header["background_index"], 3)
            np.testing.assert_array_equal(load_head(path).class_weights, head.class_weights)

    def test_rejects_bad_files(self):
        data = dumps_head(init_head(3, 2, 3, seed=0))
        for broken in (b"NOTAHEAD" + data[8:], data[:40], data[:-8]):
            with self.assertRaises(CheckpointFormatError):
                loads_head(broken)
