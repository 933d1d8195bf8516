"""
The two training stages: base training on abundant base-class data with a
plain cosine-softmax head, then few-shot adaptation on the merged K-shot set
with APF fusion and the margin loss.
"""

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apf.fusion import FusionConfig
from core.exceptions import EmptyDataset, InvalidConfig, InvalidLabel
from head.classifier import apply_gradients, expand_classes, forward_train, init_head
from margin_loss.loss import MarginLossConfig
from metrics.evaluation import group_accuracies
from synthdata.generator import BACKGROUND_LABEL, check_shots
from trainer.batching import epoch_seed, make_batches
from trainer.signals import epoch_completed, stage_completed

logger = logging.getLogger(__name__)

STAGES = ("base", "adapt")


@dataclass(frozen=True)
class StageConfig:
    stage: str = "adapt"
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.001
    seed: int = 0
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss_cfg: MarginLossConfig = field(default_factory=MarginLossConfig)
    freeze_projection: bool = True
    balanced: bool = True
    feature_dim: int | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InvalidConfig("Unknown stage %(stage)s.", params={"stage": self.stage})
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1, got %(epochs)s.", params={"epochs": self.epochs})
        if self.batch_size < 1:
            raise InvalidConfig(
                "batch_size must be >= 1, got %(b)s.", params={"b": self.batch_size}
            )
        if self.stage == "adapt" and self.fusion.alpha < 1.0 and self.batch_size < 2:
            raise InvalidConfig("Fusion needs batch_size >= 2 in the adapt stage.")
        if self.learning_rate < 0:
            raise InvalidConfig(
                "learning_rate must be >= 0, got %(lr)s.", params={"lr": self.learning_rate}
            )

    @classmethod
    def base(cls, **kwargs):
        kwargs.setdefault("epochs", 200)
        kwargs.setdefault("batch_size", 32)
        kwargs.setdefault("freeze_projection", False)
        kwargs.setdefault("balanced", False)
        return cls(stage="base", **kwargs)

    def audit(self):
        return {
            "stage": self.stage,
            "alpha": self.fusion.alpha,
            "metric": self.fusion.metric,
            "margin": self.loss_cfg.m,
            "beta": self.loss_cfg.beta,
            "stop_gradient": self.fusion.stop_gradient,
            "freeze_projection": self.freeze_projection,
        }


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    base_acc: float
    novel_acc: float
    wall_ms: float


LOG_COLUMNS = ("epoch", "loss", "base_acc", "novel_acc", "wall_ms")


@dataclass
class TrainLog:
    stage: str
    records: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for record in self.records:
                writer.writerow(
                    [record.epoch]
                    + [repr(float(getattr(record, name))) for name in LOG_COLUMNS[1:]]
                )
        return path

    @classmethod
    def load_csv(cls, path, stage="adapt"):
        with Path(path).open(newline="") as handle:
            rows = list(csv.DictReader(handle))
        records = [
            EpochRecord(
                epoch=int(row["epoch"]),
                loss=float(row["loss"]),
                base_acc=float(row["base_acc"]),
                novel_acc=float(row["novel_acc"]),
                wall_ms=float(row["wall_ms"]),
            )
            for row in rows
        ]
        return cls(stage=stage, records=records)


def _train(head, dataset, cfg, n_base, monitor):
    log = TrainLog(stage=cfg.stage)
    monitor = monitor if monitor is not None else dataset
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        batches = make_batches(
            dataset,
            cfg.batch_size,
            epoch_seed(cfg.seed, epoch),
            balanced=cfg.balanced,
            background_index=head.background_index,
            n_classes=head.n_classes,
        )
        losses = []
        for batch in batches:
            loss, grads = forward_train(head, batch)
            if cfg.freeze_projection:
                grads = grads.without_projection()
            head = apply_gradients(head, grads, cfg.learning_rate)
            losses.append(loss)
        log.step_losses.extend(losses)

        base_acc, novel_acc = group_accuracies(head, monitor, n_base)
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            base_acc=base_acc,
            novel_acc=novel_acc,
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
        log.records.append(record)
        epoch_completed.send(sender=StageConfig, stage=cfg.stage, seed=cfg.seed, record=record)

    stage_completed.send(
        sender=StageConfig, stage=cfg.stage, seed=cfg.seed, log=log, audit=cfg.audit()
    )
    return head, log


def _n_classes(dataset, fallback):
    if dataset.spec is not None:
        return dataset.spec.n_classes
    labels = dataset.labels[dataset.labels != BACKGROUND_LABEL]
    return int(labels.max()) + 1 if labels.size else fallback


def base_train(dataset_base, cfg, monitor=None):
    """
    Train a fresh head on base classes only. Fusion and margin are forced
    off (alpha = 1, m = 0) whatever ``cfg`` says.
    """
    if cfg.stage != "base":
        raise InvalidConfig("base_train needs a base-stage config.")
    if len(dataset_base) == 0:
        raise EmptyDataset()

    n_base = dataset_base.spec.n_base if dataset_base.spec else _n_classes(dataset_base, 1)
    real = dataset_base.labels[dataset_base.labels != BACKGROUND_LABEL]
    bad = real[(real < 0) | (real >= n_base)]
    if bad.size:
        raise InvalidLabel(params={"label": int(bad[0]), "n_classes": n_base})

    cfg = dataclasses.replace(
        cfg,
        fusion=FusionConfig.disabled(),
        loss_cfg=MarginLossConfig.plain(beta=cfg.loss_cfg.beta),
    )
    head = init_head(
        d_in=dataset_base.d,
        d_feat=cfg.feature_dim or dataset_base.d,
        n_classes=n_base + 1,
        seed=cfg.seed,
        fusion=cfg.fusion,
        loss_cfg=cfg.loss_cfg,
    )
    logger.info("base training: %s classes, %s samples", n_base, len(dataset_base))
    return _train(head, dataset_base, cfg, n_base, monitor)


def adapt_head(head, n_classes, cfg):
    """Grow ``head`` to ``n_classes`` real classes and switch on the adapt configs."""
    expanded = expand_classes(head, n_classes - head.background_index, seed=cfg.seed)
    return expanded.with_configs(fusion=cfg.fusion, loss_cfg=cfg.loss_cfg)


def few_shot_adapt(head, dataset_kshot, cfg, k=None, monitor=None):
    """
    Fine-tune a base-trained head on the merged K-shot set. Every class of
    C_base and C_novel must have exactly K samples.
    """
    if cfg.stage != "adapt":
        raise InvalidConfig("few_shot_adapt needs an adapt-stage config.")
    if len(dataset_kshot) == 0:
        raise EmptyDataset()

    n_base = head.background_index
    n_classes = _n_classes(dataset_kshot, n_base)
    if k is None:
        k = dataset_kshot.class_counts().get(0, 0)
    check_shots(dataset_kshot, k, n_classes)

    head = adapt_head(head, n_classes, cfg)
    logger.info(
        "few-shot adaptation: %s base + %s novel classes, K=%s",
        n_base,
        n_classes - n_base,
        k,
    )
    return _train(head, dataset_kshot, cfg, n_base, monitor)
