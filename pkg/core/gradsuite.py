"""
Gradient-check suites: every analytic gradient path against central
differences at seeded random points.
"""

from dataclasses import dataclass, field

import numpy as np

from apf.fusion import METRICS, FusionConfig, ProposalBatch, attention_weights, fuse, fuse_vjp
from diffcore import primitives
from diffcore.gradcheck import grad_check
from head.classifier import forward_train, init_head
from margin_loss.loss import MarginLossConfig, loss_and_grads, loss_forward

DEFAULT_TOL = 1e-4
SUITES = ("diffcore", "apf", "apf-stop-gradient", "margin", "head")


@dataclass
class SuiteResult:
    name: str
    reports: list = field(default_factory=list)

    @property
    def passed(self):
        return all(report.passed for _, report in self.reports)

    @property
    def worst(self):
        """(label, report) with the largest relative error."""
        return max(self.reports, key=lambda item: item[1].max_relative_error)


def _rng(seed, suite, index):
    return np.random.default_rng([seed, SUITES.index(suite), index])


# ── diffcore ─────────────────────────────────────────────────────────────────


def primitive_checks(rng, tol):
    d = int(rng.integers(3, 7))
    a, b = rng.standard_normal(d), rng.standard_normal(d)
    weights = rng.standard_normal(d)

    def unary(forward, rule):
        def f(x):
            return float(np.sum(weights * forward(x)))

        def grad(x):
            return rule(x).pullback(weights)[0]

        return f, grad

    def binary(forward, rule):
        def f(x):
            return float(forward(x[:d], x[d:]))

        def grad(x):
            return np.concatenate(rule(x[:d], x[d:]).pullback(1.0))

        return f, grad

    checks = {
        "normalize": (unary(primitives.normalize, primitives.normalize_vjp), a),
        "softmax": (unary(primitives.softmax, primitives.softmax_vjp), a),
        "log_sum_exp": (
            (
                lambda x: float(primitives.log_sum_exp(x)),
                lambda x: primitives.log_sum_exp_vjp(x).pullback(1.0)[0],
            ),
            a,
        ),
        "cosine_sim": (binary(primitives.cosine_sim, primitives.cosine_sim_vjp), np.concatenate([a, b])),
        "pearson_sim": (binary(primitives.pearson_sim, primitives.pearson_sim_vjp), np.concatenate([a, b])),
        "neg_euclidean_sim": (
            binary(primitives.neg_euclidean_sim, primitives.neg_euclidean_sim_vjp),
            np.concatenate([a, b]),
        ),
    }
    return [(name, grad_check(f, g, point, tol=tol)) for name, ((f, g), point) in checks.items()]


# ── apf ──────────────────────────────────────────────────────────────────────


def apf_check(rng, stop_gradient, tol):
    m, d = int(rng.integers(2, 7)), int(rng.integers(3, 7))
    metric = METRICS[int(rng.integers(len(METRICS)))]
    alpha = float(rng.uniform(0.5, 0.95))
    cfg = FusionConfig(alpha=alpha, metric=metric, stop_gradient=stop_gradient)
    x0 = rng.standard_normal((m, d))
    cotangent = rng.standard_normal((m, d))
    labels = np.zeros(m, dtype=np.int64)

    if stop_gradient:
        frozen = attention_weights(ProposalBatch(x0, labels), metric).weights

        def f(x):
            return float(np.sum(cotangent * (alpha * x + (1.0 - alpha) * (frozen @ x))))

    else:

        def f(x):
            return float(np.sum(cotangent * fuse(ProposalBatch(x, labels), cfg).embeddings))

    def grad(x):
        return fuse_vjp(ProposalBatch(x, labels), cfg, cotangent)

    return f"{metric} M={m} d={d}", grad_check(f, grad, x0, tol=tol)


# ── margin loss ──────────────────────────────────────────────────────────────


def margin_check(rng, tol, corrupt=False):
    m, n, d = int(rng.integers(2, 7)), int(rng.integers(2, 6)), int(rng.integers(3, 7))
    cfg = MarginLossConfig(m=float(rng.uniform(0.0, 0.5)), beta=20.0, background_index=n - 1)
    labels = rng.integers(n, size=m)
    point = np.concatenate([rng.standard_normal(m * d), rng.standard_normal(n * d)])

    def unpack(x):
        return x[: m * d].reshape(m, d), x[m * d :].reshape(n, d)

    def f(x):
        return loss_forward(*unpack(x), labels, cfg)

    def grad(x):
        _, grad_features, grad_weights = loss_and_grads(*unpack(x), labels, cfg)
        analytic = np.concatenate([grad_features.ravel(), grad_weights.ravel()])
        if corrupt:
            analytic = analytic * 1.5 + 1e-3
        return analytic

    return f"M={m} N={n} d={d}", grad_check(f, grad, point, tol=tol)


# ── head ─────────────────────────────────────────────────────────────────────


def head_check(rng, seed, index, tol):
    d_in, d_feat, n_classes, m = 4, 3, 3, 4
    metric = METRICS[index % len(METRICS)]
    head = init_head(
        d_in,
        d_feat,
        n_classes,
        seed=seed * 1000 + index,
        fusion=FusionConfig(alpha=0.8, metric=metric),
        loss_cfg=MarginLossConfig(m=0.2, beta=20.0),
    )
    batch = ProposalBatch(rng.standard_normal((m, d_in)), rng.integers(n_classes, size=m), n_classes)

    def f(theta):
        return forward_train(head.with_parameter_vector(theta), batch)[0]

    def grad(theta):
        return forward_train(head.with_parameter_vector(theta), batch)[1].as_vector()

    return f"{metric} M={m}", grad_check(f, grad, head.parameter_vector(), tol=tol)


def run_suites(seed=0, count=100, tol=DEFAULT_TOL, corrupt=False):
    results = [SuiteResult(name) for name in SUITES]
    by_name = {result.name: result for result in results}
    for i in range(count):
        by_name["diffcore"].reports.extend(primitive_checks(_rng(seed, "diffcore", i), tol))
        by_name["apf"].reports.append(apf_check(_rng(seed, "apf", i), False, tol))
        by_name["apf-stop-gradient"].reports.append(
            apf_check(_rng(seed, "apf-stop-gradient", i), True, tol)
        )
        by_name["margin"].reports.append(margin_check(_rng(seed, "margin", i), tol, corrupt))
        by_name["head"].reports.append(head_check(_rng(seed, "head", i), seed, i, tol))
    return results
