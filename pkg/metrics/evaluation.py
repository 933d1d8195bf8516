"""
Evaluation: confusion matrices, confusion percentage, base-class forgetting,
group accuracies and embedding-cluster statistics.

Accuracy stands in for detection mAP; there is no localization here.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core.exceptions import (
    DatasetFormatError,
    EmptyClass,
    EmptyMatrix,
    ForgettingUndefined,
    InvalidLabel,
)
from diffcore.primitives import normalize
from head.classifier import predict_batch
from synthdata.generator import BACKGROUND_LABEL


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def per_class_accuracy(self):
        rows = self.counts.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / rows, 0.0)

    def group_accuracy(self, class_ids):
        """Sample-weighted accuracy over the rows in ``class_ids``; 0.0 when empty."""
        class_ids = list(class_ids)
        if not class_ids:
            return 0.0
        rows = self.counts[class_ids]
        total = rows.sum()
        if total == 0:
            return 0.0
        return float(rows[np.arange(len(class_ids)), class_ids].sum() / total)

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["true\\predicted"] + list(self.class_names))
            for name, row in zip(self.class_names, self.counts):
                writer.writerow([name] + [int(v) for v in row])
        return path

    @classmethod
    def load_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as handle:
            rows = list(csv.reader(handle))
        if not rows:
            raise DatasetFormatError(params={"path": path, "line": 1})
        names = tuple(rows[0][1:])
        counts = []
        for line, row in enumerate(rows[1:], start=2):
            if len(row) != len(names) + 1:
                raise DatasetFormatError(params={"path": path, "line": line})
            try:
                counts.append([int(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetFormatError(params={"path": path, "line": line}) from exc
        return cls(np.array(counts, dtype=np.int64).reshape(len(names), len(names)), names)


@dataclass(frozen=True)
class ForgettingReport:
    acc_base_before: float
    acc_base_after: float
    acc_novel_after: float
    percent_drop: float


@dataclass(frozen=True, eq=False)
class ClusterStats:
    intra_variance: dict
    min_angle_deg: float


def class_names(n_base, n_classes_real):
    names = [f"base_{i}" for i in range(n_base)]
    names += [f"novel_{i}" for i in range(n_classes_real - n_base)]
    return tuple(names + ["background"])


def confusion_from_predictions(true, predicted, n_classes, names=None):
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    for values in (true, predicted):
        bad = values[(values < 0) | (values >= n_classes)]
        if bad.size:
            raise InvalidLabel(params={"label": int(bad[0]), "n_classes": n_classes})
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, predicted), 1)
    names = tuple(names) if names else tuple(str(i) for i in range(n_classes))
    return ConfusionMatrix(counts, names)


def _head_targets(head, labels):
    return np.where(labels == BACKGROUND_LABEL, head.background_index, labels)


def confusion(head, dataset, n_base=None, fuse_at_eval=None, context=None, jobs=1):
    """
    Tally predictions of ``head`` over ``dataset``; background rows count
    against the head's background row. Rows may be sharded over ``jobs``
    worker threads; shard counts are summed.
    """
    targets = _head_targets(head, dataset.labels)
    n = head.n_classes
    n_base = head.background_index if n_base is None else n_base
    names = class_names(n_base, head.background_index)

    def shard(indices):
        if indices.size == 0:
            return np.zeros((n, n), dtype=np.int64)
        predicted = predict_batch(head, dataset.embeddings[indices], fuse_at_eval, context)
        return confusion_from_predictions(targets[indices], predicted, n).counts

    shards = np.array_split(np.arange(len(dataset)), max(1, jobs))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(shard, shards))
    else:
        parts = [shard(indices) for indices in shards]
    return ConfusionMatrix(np.sum(parts, axis=0).astype(np.int64), names)


def confusion_percentage(cm):
    """100 * off-diagonal mass / total mass."""
    total = cm.counts.sum()
    if total <= 0:
        raise EmptyMatrix()
    return float(100.0 * (total - np.trace(cm.counts)) / total)


def forgetting(acc_before, acc_after, acc_novel):
    if not acc_before > 0:
        raise ForgettingUndefined(params={"acc_before": acc_before})
    return ForgettingReport(
        acc_base_before=float(acc_before),
        acc_base_after=float(acc_after),
        acc_novel_after=float(acc_novel),
        percent_drop=100.0 * (acc_before - acc_after) / acc_before,
    )


def group_accuracies(head, dataset, n_base, fuse_at_eval=None, context=None):
    """(base accuracy, novel accuracy); background rows are excluded."""
    labels = dataset.labels
    real = labels != BACKGROUND_LABEL
    if not real.any():
        return 0.0, 0.0
    predicted = predict_batch(head, dataset.embeddings[real], fuse_at_eval, context)
    correct = predicted == labels[real]
    base = labels[real] < n_base
    base_acc = float(correct[base].mean()) if base.any() else 0.0
    novel_acc = float(correct[~base].mean()) if (~base).any() else 0.0
    return base_acc, novel_acc


def cluster_stats(embeddings, labels):
    """Per-class mean squared distance to the centroid, and the minimum
    pairwise angle (degrees) between class centroids."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise EmptyClass()
    centroids, intra = [], {}
    for label in classes:
        members = embeddings[labels == label]
        centroid = members.mean(axis=0)
        centroids.append(centroid)
        intra[int(label)] = float(np.mean(np.sum((members - centroid) ** 2, axis=1)))
    unit = normalize(np.array(centroids))
    cosines = np.clip(unit @ unit.T, -1.0, 1.0)
    upper = np.triu_indices(classes.size, k=1)
    min_angle = float(np.degrees(np.arccos(cosines[upper].max())))
    return ClusterStats(intra_variance=intra, min_angle_deg=min_angle)


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    base_acc: float
    novel_acc: float
    confusion_pct: float
    confusion: ConfusionMatrix


def evaluate(head, dataset, n_base, fuse_at_eval=None, context=None, jobs=1):
    cm = confusion(head, dataset, n_base, fuse_at_eval, context, jobs)
    base_ids = range(n_base)
    novel_ids = range(n_base, head.background_index)
    return EvaluationReport(
        base_acc=cm.group_accuracy(base_ids),
        novel_acc=cm.group_accuracy(novel_ids),
        confusion_pct=confusion_percentage(cm),
        confusion=cm,
    )
