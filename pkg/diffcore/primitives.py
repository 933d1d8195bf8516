"""
Differentiable numerical primitives.

Each primitive has a forward function and a ``*_vjp`` companion returning a
``VjpResult``: the forward output plus a pullback mapping an output cotangent
to input cotangents (J^T applied to the cotangent). ``normalize``,
``softmax`` and ``log_sum_exp`` act on the last axis, so they also work on
row-stacked matrices.

All arithmetic is float64.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from core.exceptions import (
    DegenerateNorm,
    DegenerateVariance,
    NonFiniteInput,
    ShapeMismatch,
    UnknownPrimitive,
)

EPS_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class VjpResult:
    output: object
    pullback: Callable


def as_vector(values, name="vector"):
    """Coerce to a finite float64 array with at least one coordinate."""
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 0 or array.shape[-1] < 1:
        raise ShapeMismatch(
            "%(name)s must have dimension >= 1, got shape %(shape)s.",
            params={"name": name, "shape": array.shape},
        )
    if not np.all(np.isfinite(array)):
        raise NonFiniteInput(
            "%(name)s contains NaN or Inf values.", params={"name": name}
        )
    return array


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(
            "Dimension mismatch: %(a)s vs %(b)s.",
            params={"a": a.shape, "b": b.shape},
        )


def _row_norms(v):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = np.flatnonzero(norms.reshape(-1) <= EPS_NORM)
    if bad.size:
        raise DegenerateNorm(params={"row": int(bad[0])})
    return norms


# ── normalize ────────────────────────────────────────────────────────────────


def normalize(v):
    """Return v / ||v||_2 along the last axis."""
    v = as_vector(v)
    return v / _row_norms(v)


def normalize_vjp(v):
    v = as_vector(v)
    norms = _row_norms(v)
    unit = v / norms

    def pullback(cotangent):
        g = np.asarray(cotangent, dtype=np.float64)
        radial = np.sum(unit * g, axis=-1, keepdims=True)
        return ((g - unit * radial) / norms,)

    return VjpResult(unit, pullback)


# ── similarities ─────────────────────────────────────────────────────────────


def cosine_sim(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    _check_same_shape(a, b)
    return cosine_sim_vjp(a, b).output


def cosine_sim_vjp(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    _check_same_shape(a, b)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a <= EPS_NORM:
        raise DegenerateNorm(params={"row": 0})
    if norm_b <= EPS_NORM:
        raise DegenerateNorm(params={"row": 1})
    unit_a, unit_b = a / norm_a, b / norm_b
    raw = float(np.dot(unit_a, unit_b))
    value = min(1.0, max(-1.0, raw))

    # The clamp only absorbs rounding, so the pullback uses the unclamped form.
    def pullback(cotangent):
        g = float(cotangent)
        return (
            g * (unit_b - raw * unit_a) / norm_a,
            g * (unit_a - raw * unit_b) / norm_b,
        )

    return VjpResult(value, pullback)


def _centered(v, row):
    centered = v - v.mean()
    if np.linalg.norm(centered) <= EPS_NORM:
        raise DegenerateVariance(params={"row": row})
    return centered


def pearson_sim(a, b):
    return pearson_sim_vjp(a, b).output


def pearson_sim_vjp(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    _check_same_shape(a, b)
    inner = cosine_sim_vjp(_centered(a, 0), _centered(b, 1))

    def pullback(cotangent):
        grad_a, grad_b = inner.pullback(cotangent)
        return grad_a - grad_a.mean(), grad_b - grad_b.mean()

    return VjpResult(inner.output, pullback)


def neg_euclidean_sim(a, b):
    return neg_euclidean_sim_vjp(a, b).output


def neg_euclidean_sim_vjp(a, b):
    a, b = as_vector(a, "a"), as_vector(b, "b")
    _check_same_shape(a, b)
    diff = a - b
    distance = float(np.linalg.norm(diff))

    # Zero distance takes the zero subgradient.
    def pullback(cotangent):
        if distance == 0.0:
            zero = np.zeros_like(diff)
            return zero, zero.copy()
        grad = -float(cotangent) * diff / distance
        return grad, -grad

    return VjpResult(-distance, pullback)


# ── softmax / log-sum-exp ────────────────────────────────────────────────────


def softmax(scores):
    """Max-shifted softmax over the last axis."""
    scores = as_vector(scores, "scores")
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def softmax_vjp(scores):
    probs = softmax(scores)

    def pullback(cotangent):
        g = np.asarray(cotangent, dtype=np.float64)
        return (probs * (g - np.sum(probs * g, axis=-1, keepdims=True)),)

    return VjpResult(probs, pullback)


def log_sum_exp(scores):
    scores = as_vector(scores, "scores")
    peak = scores.max(axis=-1)
    return peak + np.log(np.exp(scores - peak[..., None]).sum(axis=-1))


def log_sum_exp_vjp(scores):
    value = log_sum_exp(scores)
    probs = softmax(scores)

    def pullback(cotangent):
        g = np.asarray(cotangent, dtype=np.float64)
        return (probs * g[..., None] if g.ndim else probs * float(g),)

    return VjpResult(value, pullback)


# ── registry ─────────────────────────────────────────────────────────────────

VJP_RULES = {
    "normalize": normalize_vjp,
    "cosine_sim": cosine_sim_vjp,
    "pearson_sim": pearson_sim_vjp,
    "neg_euclidean_sim": neg_euclidean_sim_vjp,
    "softmax": softmax_vjp,
    "log_sum_exp": log_sum_exp_vjp,
}


def vjp(op, inputs, cotangent):
    """Apply the registered rule for ``op``: returns J^T @ cotangent per input."""
    try:
        rule = VJP_RULES[op]
    except KeyError:
        raise UnknownPrimitive(params={"op": op}) from None
    return rule(*inputs).pullback(cotangent)
