import numpy as np
from django.test import SimpleTestCase

from core.exceptions import DegenerateNorm, DegenerateVariance, NonFiniteInput, UnknownPrimitive
from core.gradsuite import primitive_checks
from diffcore.gradcheck import grad_check, numerical_grad
from diffcore.primitives import (
    cosine_sim,
    neg_euclidean_sim,
    normalize,
    pearson_sim,
    softmax,
    vjp,
)


class NormalizeTests(SimpleTestCase):
    def test_examples(self):
        np.testing.assert_allclose(normalize([0.0, 5.0]), [0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
        unit = normalize([1.0, -2.0, 0.5])
        np.testing.assert_allclose(normalize(unit), unit, atol=1e-15)
        self.assertAlmostEqual(float(np.linalg.norm(unit)), 1.0, delta=1e-12)

    def test_rows_are_normalized_independently(self):
        rows = normalize([[3.0, 4.0], [0.0, 2.0]])
        np.testing.assert_allclose(rows, [[0.6, 0.8], [0.0, 1.0]], atol=1e-15)

    def test_zero_vector_rejected_with_row(self):
        with self.assertRaises(DegenerateNorm) as cm:
            normalize([[1.0, 0.0], [0.0, 0.0]])
        self.assertEqual(cm.exception.params["row"], 1)

    def test_non_finite_rejected(self):
        with self.assertRaises(NonFiniteInput):
            normalize([1.0, np.nan])


class SimilarityTests(SimpleTestCase):
    def test_cosine_examples(self):
        self.assertEqual(cosine_sim([1.0, 0.0], [1.0, 0.0]), 1.0)
        self.assertEqual(cosine_sim([1.0, 0.0], [0.0, 1.0]), 0.0)
        self.assertAlmostEqual(cosine_sim([1.0, 2.0], [2.0, 1.0]), 0.8, delta=1e-15)

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = rng.standard_normal(5), rng.standard_normal(5)
            lam, mu = rng.uniform(0.01, 100.0, size=2)
            self.assertAlmostEqual(cosine_sim(a, b), cosine_sim(lam * a, mu * b), delta=1e-12)

    def test_cosine_degenerate(self):
        with self.assertRaises(DegenerateNorm):
            cosine_sim([0.0, 0.0], [1.0, 0.0])

    def test_pearson_examples(self):
        a = np.array([1.0, 2.0, 4.0])
        self.assertAlmostEqual(pearson_sim(a, a), 1.0, delta=1e-15)
        self.assertAlmostEqual(pearson_sim([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]), -1.0, delta=1e-15)
        expected = np.corrcoef([1.0, 2.0, 4.0], [2.0, 3.0, 7.0])[0, 1]
        self.assertAlmostEqual(pearson_sim([1.0, 2.0, 4.0], [2.0, 3.0, 7.0]), expected, delta=1e-12)

    def test_pearson_is_centered_cosine(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.standard_normal(6), rng.standard_normal(6)
            self.assertAlmostEqual(
                pearson_sim(a, b), cosine_sim(a - a.mean(), b - b.mean()), delta=1e-12
            )

    def test_pearson_constant_input(self):
        with self.assertRaises(DegenerateVariance):
            pearson_sim([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])

    def test_neg_euclidean(self):
        a = np.array([0.3, -1.2])
        self.assertEqual(neg_euclidean_sim(a, a), 0.0)
        self.assertAlmostEqual(neg_euclidean_sim([0.0, 0.0], [3.0, 4.0]), -5.0, delta=1e-15)
        b = np.array([2.0, 0.5])
        self.assertEqual(neg_euclidean_sim(a, b), neg_euclidean_sim(b, a))


class SoftmaxTests(SimpleTestCase):
    def test_examples(self):
        np.testing.assert_allclose(softmax([0.7, 0.7, 0.7]), [1 / 3] * 3, atol=1e-15)
        np.testing.assert_array_equal(softmax([12.5]), [1.0])
        np.testing.assert_allclose(softmax([0.0, np.log(3.0)]), [0.25, 0.75], atol=1e-15)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            scores = 20.0 * rng.uniform(-1.0, 1.0, size=int(rng.integers(1, 12)))
            probs = softmax(scores)
            self.assertAlmostEqual(float(probs.sum()), 1.0, delta=1e-12)
            self.assertTrue(np.all(probs > 0))
            shift = rng.uniform(-50.0, 50.0)
            np.testing.assert_allclose(softmax(scores + shift), probs, rtol=0, atol=1e-12)


class VjpTests(SimpleTestCase):
    def test_normalize_on_unit_vector_projects_cotangent(self):
        v = normalize([1.0, 2.0, -2.0])
        u = np.array([0.5, -1.0, 3.0])
        (grad,) = vjp("normalize", (v,), u)
        np.testing.assert_allclose(grad, (np.eye(3) - np.outer(v, v)) @ u, atol=1e-15)

    def test_softmax_uniform_with_ones_cotangent(self):
        (grad,) = vjp("softmax", (np.zeros(4),), np.ones(4))
        np.testing.assert_allclose(grad, np.zeros(4), atol=1e-16)

    def test_cosine_at_orthogonal_unit_inputs(self):
        a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        grad_a, grad_b = vjp("cosine_sim", (a, b), 2.5)
        np.testing.assert_allclose(grad_a, 2.5 * b, atol=1e-15)
        np.testing.assert_allclose(grad_b, 2.5 * a, atol=1e-15)

    def test_unknown_primitive(self):
        with self.assertRaises(UnknownPrimitive):
            vjp("arcsin", (np.ones(2),), np.ones(2))

    def test_pullback_is_linear(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(4)
        for op in ("normalize", "softmax"):
            u, v = rng.standard_normal(4), rng.standard_normal(4)
            (combined,) = vjp(op, (x,), 2.0 * u - 3.0 * v)
            (pu,) = vjp(op, (x,), u)
            (pv,) = vjp(op, (x,), v)
            np.testing.assert_allclose(combined, 2.0 * pu - 3.0 * pv, rtol=1e-9, atol=1e-12)

    def test_every_primitive_matches_finite_differences(self):
        for i in range(100):
            for name, report in primitive_checks(np.random.default_rng([42, i]), tol=1e-6):
                self.assertTrue(report.passed, f"{name} at point {i}: {report.describe()}")


class GradCheckTests(SimpleTestCase):
    def test_quadratic(self):
        point = np.random.default_rng(0).standard_normal(6)
        report = grad_check(lambda x: float(x @ x), lambda x: 2.0 * x, point)
        self.assertLessEqual(report.max_relative_error, 1e-6)
        self.assertTrue(report.passed)

    def test_constant_map(self):
        report = grad_check(lambda x: 3.0, lambda x: np.zeros_like(x), np.ones(3))
        np.testing.assert_array_equal(report.analytic, np.zeros(3))
        np.testing.assert_array_equal(report.numeric, np.zeros(3))
        self.assertTrue(report.passed)

    def test_reports_worst_coordinate(self):
        point = np.array([1.0, 2.0, 3.0])
        report = grad_check(
            lambda x: float(x @ x), lambda x: 2.0 * x + np.array([0.0, 0.0, 1.0]), point
        )
        self.assertFalse(report.passed)
        self.assertEqual(report.worst_index, (2,))
        self.assertIn("FAIL", report.describe())

    def test_numerical_grad_leaves_point_untouched(self):
        point = np.array([0.5, -0.5])
        numerical_grad(lambda x: float(np.sum(x**3)), point)
        np.testing.assert_array_equal(point, [0.5, -0.5])
