"""
The trainable classifier head: a linear projection standing in for the RoI
head layers, APF fusion over the projected batch, and cosine scoring against
one weight row per class. The background class owns the last weight row.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from apf.fusion import FusionConfig, ProposalBatch, fuse, fuse_vjp
from core.exceptions import InvalidConfig, ShapeMismatch
from diffcore.primitives import as_vector
from margin_loss.loss import MarginLossConfig, class_cosines, loss_and_grads


@dataclass(frozen=True, eq=False)
class HeadGradients:
    projection: np.ndarray
    bias: np.ndarray
    class_weights: np.ndarray

    def without_projection(self):
        return HeadGradients(
            np.zeros_like(self.projection), np.zeros_like(self.bias), self.class_weights
        )

    def as_vector(self):
        return np.concatenate(
            [self.projection.ravel(), self.bias.ravel(), self.class_weights.ravel()]
        )

    def max_abs(self):
        return float(np.max(np.abs(self.as_vector())))


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    projection: np.ndarray
    bias: np.ndarray
    class_weights: np.ndarray
    background_index: int
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss_cfg: MarginLossConfig | None = None

    def __post_init__(self):
        projection = as_vector(self.projection, "projection")
        bias = as_vector(self.bias, "bias")
        class_weights = as_vector(self.class_weights, "class_weights")
        if projection.ndim != 2 or class_weights.ndim != 2 or bias.ndim != 1:
            raise ShapeMismatch("Head parameters have the wrong rank.")
        if bias.shape[0] != projection.shape[1] or class_weights.shape[1] != projection.shape[1]:
            raise ShapeMismatch(
                "Projection %(projection)s, bias %(bias)s and class weights %(weights)s disagree.",
                params={
                    "projection": projection.shape,
                    "bias": bias.shape,
                    "weights": class_weights.shape,
                },
            )
        n_classes = class_weights.shape[0]
        if n_classes < 2:
            raise InvalidConfig(
                "A head needs at least one class plus background, got %(n)s rows.",
                params={"n": n_classes},
            )
        if not 0 <= self.background_index < n_classes:
            raise InvalidConfig(
                "Background index %(bg)s is outside [0, %(n)s).",
                params={"bg": self.background_index, "n": n_classes},
            )
        loss_cfg = self.loss_cfg or MarginLossConfig(background_index=self.background_index)
        if loss_cfg.background_index != self.background_index:
            loss_cfg = dataclasses.replace(loss_cfg, background_index=self.background_index)
        object.__setattr__(self, "projection", projection)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "class_weights", class_weights)
        object.__setattr__(self, "loss_cfg", loss_cfg)

    @property
    def d_in(self):
        return self.projection.shape[0]

    @property
    def d_feat(self):
        return self.projection.shape[1]

    @property
    def n_classes(self):
        return self.class_weights.shape[0]

    def with_configs(self, fusion=None, loss_cfg=None):
        return dataclasses.replace(
            self,
            fusion=fusion or self.fusion,
            loss_cfg=loss_cfg or self.loss_cfg,
        )

    def parameter_vector(self):
        return np.concatenate(
            [self.projection.ravel(), self.bias.ravel(), self.class_weights.ravel()]
        )

    def with_parameter_vector(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        sizes = np.cumsum([self.projection.size, self.bias.size])
        if vector.size != self.parameter_vector().size:
            raise ShapeMismatch(
                "Expected %(expected)s parameters, got %(got)s.",
                params={"expected": self.parameter_vector().size, "got": vector.size},
            )
        return dataclasses.replace(
            self,
            projection=vector[: sizes[0]].reshape(self.projection.shape),
            bias=vector[sizes[0] : sizes[1]].copy(),
            class_weights=vector[sizes[1] :].reshape(self.class_weights.shape),
        )


@dataclass(frozen=True, eq=False)
class Prediction:
    class_id: int
    score: float
    cosines: np.ndarray


def _random_unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    # Resample anything too close to the origin to be normalized.
    while True:
        norms = np.linalg.norm(rows, axis=1)
        small = norms < 1e-6
        if not small.any():
            return rows / norms[:, None]
        rows[small] = rng.standard_normal((int(small.sum()), d))


def init_head(d_in, d_feat, n_classes, seed, fusion=None, loss_cfg=None):
    """Seeded head; the background class takes the last of ``n_classes`` rows."""
    rng = np.random.default_rng([seed, 0])
    bound = 1.0 / np.sqrt(d_in)
    projection = rng.uniform(-bound, bound, size=(d_in, d_feat))
    bias = rng.uniform(-bound, bound, size=d_feat)
    class_weights = _random_unit_rows(rng, n_classes, d_feat)
    return ClassifierHead(
        projection=projection,
        bias=bias,
        class_weights=class_weights,
        background_index=n_classes - 1,
        fusion=fusion or FusionConfig(),
        loss_cfg=loss_cfg,
    )


def expand_classes(head, n_new, seed):
    """Insert ``n_new`` seeded unit rows just before the background row."""
    if n_new < 0:
        raise InvalidConfig("Cannot remove classes (n_new=%(n)s).", params={"n": n_new})
    rng = np.random.default_rng([seed, 1])
    new_rows = _random_unit_rows(rng, n_new, head.d_feat)
    weights = head.class_weights
    bg = head.background_index
    expanded = np.vstack([weights[:bg], new_rows, weights[bg:]])
    return dataclasses.replace(
        head,
        class_weights=expanded,
        background_index=bg + n_new,
        loss_cfg=dataclasses.replace(head.loss_cfg, background_index=bg + n_new),
    )


def project(head, embeddings):
    x = as_vector(embeddings, "embeddings")
    if x.shape[-1] != head.d_in:
        raise ShapeMismatch(
            "Embedding dimension %(got)s does not match head input %(expected)s.",
            params={"got": x.shape[-1], "expected": head.d_in},
        )
    return x @ head.projection + head.bias


def forward_train(head, batch):
    """project -> fuse -> cosine margin loss; returns (loss, HeadGradients)."""
    features = project(head, batch.embeddings)
    projected = ProposalBatch(features, batch.labels, head.n_classes)
    fused = fuse(projected, head.fusion)
    loss, grad_fused, grad_weights = loss_and_grads(
        fused.embeddings, head.class_weights, batch.labels, head.loss_cfg
    )
    grad_features = fuse_vjp(projected, head.fusion, grad_fused)
    grads = HeadGradients(
        projection=batch.embeddings.T @ grad_features,
        bias=grad_features.sum(axis=0),
        class_weights=grad_weights,
    )
    return loss, grads


def score(head, embeddings, fuse_at_eval=None, context=None):
    """Cosine table of a batch of raw embeddings against every class row."""
    fuse_at_eval = head.fusion.fuse_at_eval if fuse_at_eval is None else fuse_at_eval
    features = project(head, np.atleast_2d(embeddings))
    if fuse_at_eval and context is not None and context.M > 0:
        context_features = project(head, context.embeddings)
        fused = np.empty_like(features)
        # Each query is fused with the context only, never with other queries.
        for i, row in enumerate(features):
            stacked = np.vstack([row, context_features])
            labels = np.full(stacked.shape[0], head.background_index)
            fused[i] = fuse(ProposalBatch(stacked, labels), head.fusion).embeddings[0]
        features = fused
    return class_cosines(features, head.class_weights).values


def predict(head, embedding, fuse_at_eval=None, context=None):
    cosines = score(head, embedding, fuse_at_eval, context)[0]
    class_id = int(np.argmax(cosines))
    return Prediction(class_id=class_id, score=float(cosines[class_id]), cosines=cosines)


def predict_batch(head, embeddings, fuse_at_eval=None, context=None):
    """Vectorized ``predict``: returns predicted class ids."""
    return np.argmax(score(head, embeddings, fuse_at_eval, context), axis=1)


def apply_gradients(head, gradients, learning_rate):
    """Plain gradient step; returns a new head."""
    for name in ("projection", "bias", "class_weights"):
        if getattr(gradients, name).shape != getattr(head, name).shape:
            raise ShapeMismatch(
                "Gradient for %(name)s has shape %(got)s, expected %(expected)s.",
                params={
                    "name": name,
                    "got": getattr(gradients, name).shape,
                    "expected": getattr(head, name).shape,
                },
            )
    return dataclasses.replace(
        head,
        projection=head.projection - learning_rate * gradients.projection,
        bias=head.bias - learning_rate * gradients.bias,
        class_weights=head.class_weights - learning_rate * gradients.class_weights,
    )
