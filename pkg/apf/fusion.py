"""
Attentive Proposal Fusion.

Every proposal embedding in a batch is re-expressed as a convex combination
of itself and its peers:

    phi(p_i) = alpha * p_i + (1 - alpha) * sum_{j != i} w_ij * p_j
    w_ij     = softmax_{j != i} sim(p_i, p_j)

Similarities are computed for the whole batch at once; the gradient path
differentiates through w_ij unless ``FusionConfig.stop_gradient`` is set.
"""

from dataclasses import dataclass

import numpy as np

from core.exceptions import (
    DegenerateVariance,
    InvalidConfig,
    InvalidLabel,
    ShapeMismatch,
)
from diffcore.primitives import EPS_NORM, as_vector, normalize, normalize_vjp

METRICS = ("cosine", "neg-euclidean", "pearson")


@dataclass(frozen=True, eq=False)
class ProposalBatch:
    embeddings: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        embeddings = as_vector(self.embeddings, "embeddings")
        if embeddings.ndim != 2:
            raise ShapeMismatch(
                "Embeddings must be an M x d matrix, got shape %(shape)s.",
                params={"shape": embeddings.shape},
            )
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != embeddings.shape[0]:
            raise ShapeMismatch(
                "Got %(labels)s labels for %(rows)s embeddings.",
                params={"labels": labels.shape[0], "rows": embeddings.shape[0]},
            )
        if self.n_classes is not None:
            bad = labels[(labels < 0) | (labels >= self.n_classes)]
            if bad.size:
                raise InvalidLabel(params={"label": int(bad[0]), "n_classes": self.n_classes})
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "labels", labels)

    @property
    def M(self):
        return self.embeddings.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]

    def with_embeddings(self, embeddings):
        return ProposalBatch(embeddings, self.labels, self.n_classes)

    def permuted(self, order):
        order = np.asarray(order)
        return ProposalBatch(self.embeddings[order], self.labels[order], self.n_classes)


@dataclass(frozen=True, eq=False)
class AttentionMatrix:
    weights: np.ndarray

    @property
    def row_sums(self):
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.8
    metric: str = "cosine"
    stop_gradient: bool = False
    fuse_at_eval: bool = False

    def __post_init__(self):
        if not 0.5 <= self.alpha <= 1.0:
            raise InvalidConfig(
                "alpha must lie in [0.5, 1.0], got %(alpha)s.", params={"alpha": self.alpha}
            )
        if self.metric not in METRICS:
            raise InvalidConfig(
                "Unknown similarity metric %(metric)s; expected one of %(choices)s.",
                params={"metric": self.metric, "choices": ", ".join(METRICS)},
            )

    @classmethod
    def disabled(cls):
        return cls(alpha=1.0)


# ── similarity matrices ──────────────────────────────────────────────────────


def _cosine_matrix(x):
    unit = normalize(x)
    return np.clip(unit @ unit.T, -1.0, 1.0)


def _centered_rows(x):
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        raise DegenerateVariance(params={"row": int(bad[0])})
    return centered


def _distances(x):
    return np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)


def similarity_matrix(embeddings, metric):
    """M x M matrix of sim(p_i, p_j) under ``metric``."""
    x = as_vector(embeddings, "embeddings")
    if metric == "cosine":
        return _cosine_matrix(x)
    if metric == "pearson":
        return _cosine_matrix(_centered_rows(x))
    if metric == "neg-euclidean":
        return -_distances(x)
    raise InvalidConfig(
        "Unknown similarity metric %(metric)s.", params={"metric": metric}
    )


def similarity_matrix_vjp(embeddings, metric, cotangent):
    """Pull an M x M cotangent on the similarity matrix back to the embeddings."""
    x = as_vector(embeddings, "embeddings")
    g = np.asarray(cotangent, dtype=np.float64)
    sym = g + g.T
    if metric == "cosine":
        rule = normalize_vjp(x)
        return rule.pullback(sym @ rule.output)[0]
    if metric == "pearson":
        rule = normalize_vjp(_centered_rows(x))
        grad = rule.pullback(sym @ rule.output)[0]
        return grad - grad.mean(axis=1, keepdims=True)
    if metric == "neg-euclidean":
        distances = _distances(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            coeff = np.where(distances > 0.0, sym / distances, 0.0)
        return -(coeff.sum(axis=1, keepdims=True) * x - coeff @ x)
    raise InvalidConfig(
        "Unknown similarity metric %(metric)s.", params={"metric": metric}
    )


# ── attention and fusion ─────────────────────────────────────────────────────


def _attention_from_similarity(similarity):
    m = similarity.shape[0]
    if m == 1:
        return np.zeros((1, 1))
    masked = np.where(np.eye(m, dtype=bool), -np.inf, similarity)
    shifted = np.exp(masked - masked.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def attention_weights(batch, metric="cosine"):
    """Row i is the softmax of sim(p_i, .) over j != i; the diagonal is zero."""
    similarity = similarity_matrix(batch.embeddings, metric)
    return AttentionMatrix(_attention_from_similarity(similarity))


def fuse(batch, cfg):
    """Apply APF to every row; labels are carried over untouched."""
    if cfg.alpha == 1.0 or batch.M == 1:
        return batch.with_embeddings(batch.embeddings.copy())
    weights = attention_weights(batch, cfg.metric).weights
    x = batch.embeddings
    return batch.with_embeddings(cfg.alpha * x + (1.0 - cfg.alpha) * (weights @ x))


def fuse_vjp(batch, cfg, cotangent):
    """J^T @ cotangent for the fuse map, as a function of the embeddings."""
    g = np.asarray(cotangent, dtype=np.float64)
    if g.shape != batch.embeddings.shape:
        raise ShapeMismatch(
            "Cotangent shape %(got)s does not match embeddings %(expected)s.",
            params={"got": g.shape, "expected": batch.embeddings.shape},
        )
    if cfg.alpha == 1.0 or batch.M == 1:
        return g.copy()

    x = batch.embeddings
    weights = attention_weights(batch, cfg.metric).weights
    grad = cfg.alpha * g + (1.0 - cfg.alpha) * (weights.T @ g)
    if cfg.stop_gradient:
        return grad

    grad_weights = (1.0 - cfg.alpha) * (g @ x.T)
    grad_similarity = weights * (
        grad_weights - np.sum(weights * grad_weights, axis=1, keepdims=True)
    )
    return grad + similarity_matrix_vjp(x, cfg.metric, grad_similarity)
