"""
Seeded synthetic embeddings: abundant base classes, K-shot novel classes and
background noise, all on (or near) the unit sphere.

Class ids: base classes are 0..n_base-1, novel classes follow. Background
samples carry ``BACKGROUND_LABEL`` (-1) until a trainer maps them onto a
head's background row.
"""

from dataclasses import dataclass

import numpy as np

from core.exceptions import (
    InfeasibleSeparation,
    InvalidConfig,
    ShapeMismatch,
    ShotCountMismatch,
)

BACKGROUND_LABEL = -1
MAX_MEAN_ATTEMPTS = 10_000
SPLITS = ("base", "kshot", "eval")


@dataclass(frozen=True)
class DatasetSpec:
    d: int = 32
    n_base: int = 7
    n_novel: int = 3
    samples_per_base: int = 500
    k: int = 10
    intra_sigma: float = 0.25
    min_angle_deg: float = 25.0
    confusable_pairs: tuple = ()
    background_rate: float = 0.1
    eval_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.d < 1:
            problems.append("d must be >= 1")
        if self.n_base < 1:
            problems.append("n_base must be >= 1")
        if self.n_novel < 0:
            problems.append("n_novel must be >= 0")
        if self.samples_per_base < 1:
            problems.append("samples_per_base must be >= 1")
        if self.k < 1:
            problems.append("k must be >= 1")
        if not self.intra_sigma > 0:
            problems.append("intra_sigma must be > 0")
        if not 0 < self.min_angle_deg <= 90:
            problems.append("min_angle_deg must lie in (0, 90]")
        if not 0 <= self.background_rate < 1:
            problems.append("background_rate must lie in [0, 1)")
        if self.eval_per_class < 1:
            problems.append("eval_per_class must be >= 1")

        pairs = tuple(
            (int(a), int(b), float(angle)) for a, b, angle in self.confusable_pairs
        )
        seen = set()
        for a, b, angle in pairs:
            if not (0 <= a < self.n_classes and 0 <= b < self.n_classes) or a == b:
                problems.append(f"confusable pair ({a}, {b}) names invalid classes")
            if not 0 < angle < 180:
                problems.append(f"confusable pair ({a}, {b}) angle must lie in (0, 180)")
            if a in seen or b in seen:
                problems.append(f"class in confusable pair ({a}, {b}) is already paired")
            seen.update((a, b))
        if problems:
            raise InvalidConfig("Invalid dataset spec: %(problems)s.", params={"problems": "; ".join(problems)})
        object.__setattr__(self, "confusable_pairs", pairs)

    @property
    def n_classes(self):
        return self.n_base + self.n_novel

    def partner(self, label):
        """(partner, angle) when ``label`` sits in a confusable pair."""
        for a, b, angle in self.confusable_pairs:
            if label == a:
                return b, angle
            if label == b:
                return a, angle
        return None


@dataclass(frozen=True, eq=False)
class Dataset:
    embeddings: np.ndarray
    labels: np.ndarray
    split: str = "base"
    spec: DatasetSpec | None = None

    def __post_init__(self):
        embeddings = np.asarray(self.embeddings, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if embeddings.ndim != 2 or embeddings.shape[0] != labels.shape[0]:
            raise ShapeMismatch(
                "Dataset needs an n x d matrix with n labels, got %(rows)s and %(labels)s.",
                params={"rows": embeddings.shape, "labels": labels.shape},
            )
        object.__setattr__(self, "embeddings", embeddings)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]

    @property
    def classes(self):
        """Sorted non-background class ids present."""
        return sorted(int(c) for c in np.unique(self.labels) if c != BACKGROUND_LABEL)

    def class_counts(self):
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def subset(self, indices, split=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.embeddings[indices], self.labels[indices], split or self.split, self.spec
        )

    def equals(self, other, atol=0.0):
        return (
            self.embeddings.shape == other.embeddings.shape
            and np.array_equal(self.labels, other.labels)
            and np.allclose(self.embeddings, other.embeddings, rtol=0.0, atol=atol)
        )


def concat(datasets, split):
    datasets = list(datasets)
    d = datasets[0].d
    return Dataset(
        np.vstack([ds.embeddings for ds in datasets]).reshape(-1, d),
        np.concatenate([ds.labels for ds in datasets]),
        split,
        datasets[0].spec,
    )


# ── class means ──────────────────────────────────────────────────────────────


def _unit(rng, d):
    while True:
        v = rng.standard_normal(d)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def _angle_deg(u, v):
    return float(np.degrees(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0))))


def _at_angle(rng, anchor, angle_deg):
    """A unit vector exactly ``angle_deg`` away from the unit ``anchor``."""
    if anchor.shape[0] == 1:
        return None
    while True:
        r = rng.standard_normal(anchor.shape[0])
        r -= np.dot(r, anchor) * anchor
        norm = np.linalg.norm(r)
        if norm > 1e-6:
            theta = np.radians(angle_deg)
            return np.cos(theta) * anchor + np.sin(theta) * (r / norm)


def class_means(spec, rng):
    """Rejection-sample one unit mean per class, honoring the separation contract."""
    means = []
    attempts = 0
    for label in range(spec.n_classes):
        pair = spec.partner(label)
        while True:
            if attempts >= MAX_MEAN_ATTEMPTS:
                raise InfeasibleSeparation(
                    params={
                        "n_classes": spec.n_classes,
                        "min_angle_deg": spec.min_angle_deg,
                        "d": spec.d,
                        "attempts": attempts,
                    }
                )
            attempts += 1
            if pair is not None and pair[0] < label:
                candidate = _at_angle(rng, means[pair[0]], pair[1])
                if candidate is None:
                    continue
            else:
                candidate = _unit(rng, spec.d)
            others = [m for other, m in enumerate(means) if pair is None or other != pair[0]]
            if all(_angle_deg(candidate, m) >= spec.min_angle_deg for m in others):
                means.append(candidate)
                break
    return np.array(means).reshape(spec.n_classes, spec.d)


def _draw(rng, mean, count, sigma):
    rows = mean + sigma * rng.standard_normal((count, mean.shape[0]))
    norms = np.linalg.norm(rows, axis=1)
    while (norms < 1e-6).any():
        small = norms < 1e-6
        rows[small] = mean + sigma * rng.standard_normal((int(small.sum()), mean.shape[0]))
        norms = np.linalg.norm(rows, axis=1)
    return rows / norms[:, None]


def _background(rng, count, d):
    return np.array([_unit(rng, d) for _ in range(count)]).reshape(count, d)


def _with_background(rng, embeddings, labels, spec, split):
    n_bg = int(round(spec.background_rate * len(labels)))
    bg = _background(rng, n_bg, spec.d)
    return Dataset(
        np.vstack([embeddings, bg]),
        np.concatenate([labels, np.full(n_bg, BACKGROUND_LABEL)]),
        split,
        spec,
    )


def _class_rows(rng, means, labels, count, sigma):
    rows = [_draw(rng, means[label], count, sigma) for label in labels]
    d = means.shape[1]
    return (
        np.vstack(rows).reshape(-1, d) if rows else np.zeros((0, d)),
        np.repeat(np.asarray(list(labels), dtype=np.int64), count),
    )


def generate(spec):
    """Return (base, kshot, eval) splits; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    base_labels = range(spec.n_base)
    novel_labels = range(spec.n_base, spec.n_classes)
    all_labels = range(spec.n_classes)

    embeddings, labels = _class_rows(rng, means, base_labels, spec.samples_per_base, spec.intra_sigma)
    base = _with_background(rng, embeddings, labels, spec, "base")

    # The K-shot set draws its base instances from the base split itself.
    embeddings, labels = _class_rows(rng, means, novel_labels, spec.k, spec.intra_sigma)
    novel_pool = _with_background(rng, embeddings, labels, spec, "kshot")
    kshot = kshot_sample(concat([base, novel_pool], "kshot"), spec.k, seed=spec.seed)

    embeddings, labels = _class_rows(rng, means, all_labels, spec.eval_per_class, spec.intra_sigma)
    evaluation = _with_background(rng, embeddings, labels, spec, "eval")
    return base, kshot, evaluation


def kshot_sample(dataset, k, seed):
    """
    Exactly ``k`` rows per class, drawn without replacement. Background rows
    are subsampled to at most ``k`` as well.
    """
    rng = np.random.default_rng([seed, 2])
    counts = dataset.class_counts()
    chosen = []
    for label in dataset.classes:
        if counts[label] < k:
            raise ShotCountMismatch(params={"label": label, "count": counts[label], "k": k})
        members = np.flatnonzero(dataset.labels == label)
        chosen.append(np.sort(rng.choice(members, size=k, replace=False)))
    background = np.flatnonzero(dataset.labels == BACKGROUND_LABEL)
    if background.size:
        take = min(k, background.size)
        chosen.append(np.sort(rng.choice(background, size=take, replace=False)))
    indices = np.concatenate(chosen) if chosen else np.array([], dtype=np.int64)
    return dataset.subset(indices, split="kshot")


def check_shots(dataset, k, n_classes):
    """Raise ShotCountMismatch unless every class 0..n_classes-1 has exactly k rows."""
    counts = dataset.class_counts()
    for label in range(n_classes):
        if counts.get(label, 0) != k:
            raise ShotCountMismatch(params={"label": label, "count": counts.get(label, 0), "k": k})
