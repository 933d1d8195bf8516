"""Seeded batch construction for both training stages."""

import numpy as np

from apf.fusion import ProposalBatch
from core.exceptions import InvalidConfig
from synthdata.generator import BACKGROUND_LABEL


def epoch_seed(seed, epoch):
    return [int(seed), int(epoch)]


def head_labels(labels, background_index):
    """Map dataset labels onto head rows (background -1 -> background row)."""
    labels = np.asarray(labels, dtype=np.int64)
    return np.where(labels == BACKGROUND_LABEL, background_index, labels)


def _balanced_order(labels, count, rng):
    groups = [np.flatnonzero(labels == value) for value in np.unique(labels)]
    picks = rng.integers(len(groups), size=count)
    return np.array([groups[g][rng.integers(groups[g].size)] for g in picks], dtype=np.int64)


def make_batches(dataset, batch_size, seed, balanced=False, background_index=None, n_classes=None):
    """
    Split ``dataset`` into ProposalBatches of ``batch_size`` rows; the last
    chunk may be shorter. Plain mode shuffles once; balanced mode draws every
    slot by picking a class (background counts as one) uniformly, then a
    member of that class uniformly.
    """
    if batch_size < 1:
        raise InvalidConfig("batch_size must be >= 1, got %(b)s.", params={"b": batch_size})
    n = len(dataset)
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    if balanced:
        order = _balanced_order(dataset.labels, n, rng)
    else:
        order = rng.permutation(n)

    labels = dataset.labels
    if background_index is not None:
        labels = head_labels(labels, background_index)
    return [
        ProposalBatch(dataset.embeddings[chunk], labels[chunk], n_classes)
        for chunk in (order[start : start + batch_size] for start in range(0, n, batch_size))
    ]
