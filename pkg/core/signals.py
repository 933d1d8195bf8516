import json
import logging

from django.dispatch import receiver

from trainer.signals import epoch_completed, stage_completed

logger = logging.getLogger("agcm.training")


def _log(level, action, message, **details):
    logger.log(
        getattr(logging, level.upper()),
        "%s: %s %s",
        action,
        message,
        json.dumps(details, sort_keys=True, default=str),
    )


# ── Training progress ─────────────────────────────────────────────────────────


@receiver(epoch_completed)
def on_epoch_completed(sender, stage, seed, record, **kwargs):
    _log(
        "debug",
        "epoch",
        f"{stage} seed {seed} epoch {record.epoch}",
        loss=record.loss,
        base_acc=record.base_acc,
        novel_acc=record.novel_acc,
        wall_ms=round(record.wall_ms, 3),
    )


@receiver(stage_completed)
def on_stage_completed(sender, stage, seed, log, audit, **kwargs):
    final = log.final
    _log(
        "info",
        "stage",
        f"{stage} seed {seed} finished after {len(log.records)} epochs",
        audit=audit,
        loss=final.loss if final else None,
        base_acc=final.base_acc if final else None,
        novel_acc=final.novel_acc if final else None,
    )
