"""
Cosine margin cross-entropy.

For features z_i and class weight rows W_j the logits are beta * cos(z_i, W_j),
with the margin m subtracted from the target cosine unless the target is the
background class:

    l_i = beta * (cos(z_i, W_y) - [y != bg] * m) - logsumexp_j(adjusted logits)
    L   = -(1 / M) * sum_i l_i

Weight rows are normalized on read; gradients flow through the normalization.
"""

from dataclasses import dataclass

import numpy as np

from core.exceptions import EmptyBatch, InvalidConfig, InvalidLabel, ShapeMismatch
from diffcore.primitives import as_vector, log_sum_exp, normalize_vjp, softmax


@dataclass(frozen=True)
class MarginLossConfig:
    m: float = 0.2
    beta: float = 20.0
    background_index: int | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidConfig("beta must be positive, got %(beta)s.", params={"beta": self.beta})
        if not -1.0 <= self.m <= 1.0:
            raise InvalidConfig("m must lie in [-1, 1], got %(m)s.", params={"m": self.m})

    @classmethod
    def plain(cls, beta=20.0, background_index=None):
        """Margin-free configuration: ordinary cosine-softmax cross-entropy."""
        return cls(m=0.0, beta=beta, background_index=background_index)


@dataclass(frozen=True, eq=False)
class CosineTable:
    values: np.ndarray


def _matrix(values, name):
    array = as_vector(values, name)
    if array.ndim != 2:
        raise ShapeMismatch(
            "%(name)s must be a matrix, got shape %(shape)s.",
            params={"name": name, "shape": array.shape},
        )
    return array


def _check_inputs(features, weights, labels):
    features = _matrix(features, "features")
    weights = _matrix(weights, "weights")
    if features.shape[0] == 0:
        raise EmptyBatch()
    if features.shape[1] != weights.shape[1]:
        raise ShapeMismatch(
            "Feature dimension %(f)s does not match weight dimension %(w)s.",
            params={"f": features.shape[1], "w": weights.shape[1]},
        )
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != features.shape[0]:
        raise ShapeMismatch(
            "Got %(labels)s labels for %(rows)s features.",
            params={"labels": labels.shape[0], "rows": features.shape[0]},
        )
    n_classes = weights.shape[0]
    bad = labels[(labels < 0) | (labels >= n_classes)]
    if bad.size:
        raise InvalidLabel(params={"label": int(bad[0]), "n_classes": n_classes})
    return features, weights, labels


def class_cosines(features, weights):
    features = _matrix(features, "features")
    weights = _matrix(weights, "weights")
    unit_features = normalize_vjp(features).output
    unit_weights = normalize_vjp(weights).output
    return CosineTable(np.clip(unit_features @ unit_weights.T, -1.0, 1.0))


def _margin_mask(labels, n_classes, cfg):
    mask = np.zeros((labels.shape[0], n_classes))
    rows = np.arange(labels.shape[0])
    applies = np.ones(labels.shape[0], dtype=bool)
    if cfg.background_index is not None:
        applies = labels != cfg.background_index
    mask[rows[applies], labels[applies]] = 1.0
    return mask


def margin_logits(cosines, labels, cfg):
    if isinstance(cosines, CosineTable):
        cosines = cosines.values
    values = np.asarray(cosines, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return cfg.beta * (values - cfg.m * _margin_mask(labels, values.shape[1], cfg))


def per_sample_terms(features, weights, labels, cfg):
    """The per-sample log-likelihoods l_i."""
    features, weights, labels = _check_inputs(features, weights, labels)
    logits = margin_logits(class_cosines(features, weights), labels, cfg)
    rows = np.arange(labels.shape[0])
    return logits[rows, labels] - log_sum_exp(logits)


def loss_forward(features, weights, labels, cfg):
    return float(-np.mean(per_sample_terms(features, weights, labels, cfg)))


def loss_and_grads(features, weights, labels, cfg):
    """Return (L, dL/dfeatures, dL/dweights)."""
    features, weights, labels = _check_inputs(features, weights, labels)
    feature_rule = normalize_vjp(features)
    weight_rule = normalize_vjp(weights)
    unit_features, unit_weights = feature_rule.output, weight_rule.output

    # Unclipped cosines for the gradient; the clip only absorbs rounding.
    cosines = unit_features @ unit_weights.T
    logits = margin_logits(np.clip(cosines, -1.0, 1.0), labels, cfg)
    rows = np.arange(labels.shape[0])
    loss = float(-np.mean(logits[rows, labels] - log_sum_exp(logits)))

    grad_logits = softmax(logits)
    grad_logits[rows, labels] -= 1.0
    grad_cosines = cfg.beta * grad_logits / labels.shape[0]

    (grad_features,) = feature_rule.pullback(grad_cosines @ unit_weights)
    (grad_weights,) = weight_rule.pullback(grad_cosines.T @ unit_features)
    return loss, grad_features, grad_weights


def loss_vjp(features, weights, labels, cfg):
    _, grad_features, grad_weights = loss_and_grads(features, weights, labels, cfg)
    return grad_features, grad_weights
