"""
Head checkpoint format, version 1.

Binary file, all fields little-endian:

    offset  type       field
    0       8 bytes    magic b"AGCMHEAD"
    8       uint32     format version (1)
    12      int64 x4   d_in, d_feat, n_classes, background_index
    44      float64    fusion alpha
    52      uint8      fusion metric (0 cosine, 1 neg-euclidean, 2 pearson)
    53      uint8      flags (bit 0 stop_gradient, bit 1 fuse_at_eval)
    54      float64    margin m
    62      float64    scale beta
    70      float64[]  projection (d_in x d_feat), bias (d_feat),
                       class_weights (n_classes x d_feat), row-major

A JSON sidecar ``<file>.json`` repeats the header fields for humans.
"""

import json
import struct
from pathlib import Path

import numpy as np

from apf.fusion import METRICS, FusionConfig
from core.exceptions import AgcmError, CheckpointFormatError
from head.classifier import ClassifierHead
from margin_loss.loss import MarginLossConfig

MAGIC = b"AGCMHEAD"
VERSION = 1
HEADER = struct.Struct("<8sIqqqqdBBdd")
FLOAT = np.dtype("<f8")


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def header_fields(head):
    return {
        "magic": MAGIC.decode("ascii"),
        "version": VERSION,
        "d_in": head.d_in,
        "d_feat": head.d_feat,
        "n_classes": head.n_classes,
        "background_index": head.background_index,
        "fusion": {
            "alpha": head.fusion.alpha,
            "metric": head.fusion.metric,
            "stop_gradient": head.fusion.stop_gradient,
            "fuse_at_eval": head.fusion.fuse_at_eval,
        },
        "loss": {"m": head.loss_cfg.m, "beta": head.loss_cfg.beta},
        "layout": "projection, bias, class_weights; float64 little-endian, row-major",
    }


def dumps_head(head):
    flags = int(head.fusion.stop_gradient) | (int(head.fusion.fuse_at_eval) << 1)
    header = HEADER.pack(
        MAGIC,
        VERSION,
        head.d_in,
        head.d_feat,
        head.n_classes,
        head.background_index,
        head.fusion.alpha,
        METRICS.index(head.fusion.metric),
        flags,
        head.loss_cfg.m,
        head.loss_cfg.beta,
    )
    payload = np.concatenate(
        [head.projection.ravel(), head.bias.ravel(), head.class_weights.ravel()]
    ).astype(FLOAT)
    return header + payload.tobytes()


def loads_head(data, source="<bytes>"):
    if len(data) < HEADER.size:
        raise CheckpointFormatError(
            "Checkpoint %(path)s is truncated (%(size)s bytes).",
            params={"path": source, "size": len(data)},
        )
    (magic, version, d_in, d_feat, n_classes, bg, alpha, metric, flags, m, beta) = (
        HEADER.unpack_from(data)
    )
    if magic != MAGIC:
        raise CheckpointFormatError(
            "Checkpoint %(path)s has bad magic bytes.", params={"path": source}
        )
    if version != VERSION:
        raise CheckpointFormatError(
            "Checkpoint %(path)s has unsupported version %(version)s.",
            params={"path": source, "version": version},
        )
    if metric >= len(METRICS) or min(d_in, d_feat, n_classes) < 1:
        raise CheckpointFormatError(params={"path": source})

    expected = d_in * d_feat + d_feat + n_classes * d_feat
    values = np.frombuffer(data, dtype=FLOAT, offset=HEADER.size)
    if values.size != expected or len(data) != HEADER.size + expected * FLOAT.itemsize:
        raise CheckpointFormatError(
            "Checkpoint %(path)s holds %(got)s values, expected %(expected)s.",
            params={"path": source, "got": values.size, "expected": expected},
        )
    values = values.astype(np.float64)
    split = np.cumsum([d_in * d_feat, d_feat])
    try:
        return ClassifierHead(
            projection=values[: split[0]].reshape(d_in, d_feat),
            bias=values[split[0] : split[1]],
            class_weights=values[split[1] :].reshape(n_classes, d_feat),
            background_index=bg,
            fusion=FusionConfig(
                alpha=alpha,
                metric=METRICS[metric],
                stop_gradient=bool(flags & 1),
                fuse_at_eval=bool(flags & 2),
            ),
            loss_cfg=MarginLossConfig(m=m, beta=beta, background_index=bg),
        )
    except AgcmError as exc:
        raise CheckpointFormatError(
            "Checkpoint %(path)s is inconsistent: %(reason)s",
            params={"path": source, "reason": str(exc)},
        ) from exc


def save_head(head, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_head(head))
    sidecar_path(path).write_text(json.dumps(header_fields(head), indent=2, sort_keys=True) + "\n")
    return path


def load_head(path):
    path = Path(path)
    return loads_head(path.read_bytes(), source=str(path))
