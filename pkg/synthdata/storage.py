"""
Dataset CSV files.

Header ``label,x0,x1,...,x{d-1}``; one row per sample; background rows carry
label -1. Coordinates are written with 17 significant digits, which reads
back bit-exactly.
"""

import csv
from pathlib import Path

import numpy as np

from core.exceptions import DatasetFormatError
from synthdata.generator import Dataset


def _format(value):
    return format(float(value), ".17g")


def save_csv(dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label"] + [f"x{i}" for i in range(dataset.d)])
        for label, row in zip(dataset.labels, dataset.embeddings):
            writer.writerow([int(label)] + [_format(v) for v in row])
    return path


def _decoded_lines(path):
    lines = []
    for number, raw in enumerate(path.read_bytes().splitlines(keepends=True), start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DatasetFormatError(
                "%(path)s line %(line)s: not valid UTF-8 (%(reason)s).",
                params={"path": path, "line": number, "reason": exc.reason},
            ) from exc
    return lines


def load_csv(path, split="base"):
    path = Path(path)
    reader = csv.reader(_decoded_lines(path))
    header = next(reader, None)
    if not header or header[0] != "label":
        raise DatasetFormatError(
            "%(path)s line %(line)s: header must start with 'label'.",
            params={"path": path, "line": 1},
        )
    expected = [f"x{i}" for i in range(len(header) - 1)]
    if header[1:] != expected:
        raise DatasetFormatError(
            "%(path)s line %(line)s: coordinate columns must be x0..x{d-1}.",
            params={"path": path, "line": 1},
        )
    d = len(expected)
    labels, rows = [], []
    for record in reader:
        line = reader.line_num
        if not record:
            continue
        if len(record) != d + 1:
            raise DatasetFormatError(
                "%(path)s line %(line)s: expected %(expected)s columns, got %(got)s.",
                params={"path": path, "line": line, "expected": d + 1, "got": len(record)},
            )
        try:
            labels.append(int(record[0]))
            rows.append([float(v) for v in record[1:]])
        except ValueError as exc:
            raise DatasetFormatError(
                "%(path)s line %(line)s: %(reason)s.",
                params={"path": path, "line": line, "reason": exc},
            ) from exc
    embeddings = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    if not np.all(np.isfinite(embeddings)):
        raise DatasetFormatError(
            "%(path)s: coordinates must be finite.", params={"path": path, "line": "?"}
        )
    return Dataset(embeddings, np.array(labels, dtype=np.int64), split)
