"""
One-parameter-at-a-time ablation sweeps around the configured defaults.

Base training does not depend on any swept parameter, so each seed is
base-trained once and every cell adapts from the same base heads.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from apf.fusion import METRICS
from core.exceptions import AgcmError, InvalidConfig
from core.experiment import adapt_variant, prepare_seed
from core.utils import Aggregates, CsvFormat

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "parameter",
    "value",
    "base_acc",
    "novel_acc",
    "forgetting_pct",
    "confusion_pct",
    "status",
)

# Component ablation: (name, alpha on?, margin on?).
COMPONENTS = (
    ("baseline", False, False),
    ("apf-only", True, False),
    ("margin-only", False, True),
    ("apf+margin", True, True),
)


@dataclass(frozen=True)
class SweepGrid:
    alphas: tuple = ()
    metrics: tuple = ()
    margins: tuple = ()
    components: bool = False

    def __post_init__(self):
        problems = [f"alpha {a}" for a in self.alphas if not 0.5 <= a <= 1.0]
        problems += [f"metric {m}" for m in self.metrics if m not in METRICS]
        problems += [f"margin {m}" for m in self.margins if not -1.0 <= m <= 1.0]
        if problems:
            raise InvalidConfig(
                "Sweep values out of range: %(values)s.", params={"values": ", ".join(problems)}
            )
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "margins", tuple(float(m) for m in self.margins))

    @classmethod
    def from_config(cls, config, components=False):
        return cls(components=components, **config.sweep)

    def cells(self, config):
        """(parameter, value, {dotted key: value}) per cell, in grid order."""
        cells = [("alpha", a, {"fusion.alpha": a}) for a in self.alphas]
        cells += [("metric", m, {"fusion.metric": m}) for m in self.metrics]
        cells += [("margin", m, {"loss.margin": m}) for m in self.margins]
        if self.components:
            alpha = config.values["fusion.alpha"]
            margin = config.values["loss.margin"]
            for name, apf_on, margin_on in COMPONENTS:
                overrides = {
                    "fusion.alpha": alpha if apf_on else 1.0,
                    "loss.margin": margin if margin_on else 0.0,
                }
                cells.append(("component", name, overrides))
        return cells


@dataclass
class CellResult:
    parameter: str
    value: object
    metrics: dict
    status: str = "ok"

    def as_row(self):
        row = [self.parameter, CsvFormat.number(self.value) if isinstance(self.value, float) else self.value]
        row += [CsvFormat.number(self.metrics.get(name, math.nan)) for name in SWEEP_COLUMNS[2:6]]
        return row + [self.status]


def _run_cell(config, prepared, parameter, value, overrides, output_dir):
    try:
        cell_config = config.with_values(**overrides)
        rows = []
        for seed_run in prepared:
            stage_cfg = replace(cell_config.adapt_stage, seed=seed_run.seed)
            row, _ = adapt_variant(seed_run, "agcm", stage_cfg, output_dir)
            rows.append(row)
    except AgcmError as exc:
        logger.warning("sweep cell %s=%s failed: %s", parameter, value, exc)
        return CellResult(parameter, value, {}, status=f"failed: {exc}")
    metrics = {name: Aggregates.mean([row[name] for row in rows]) for name in SWEEP_COLUMNS[2:6]}
    logger.info("sweep cell %s=%s done", parameter, value)
    return CellResult(parameter, value, metrics)


def run_sweep(config, grid, jobs=1, output_dir=None):
    """Run every grid cell over every configured seed; failed cells are recorded."""
    output_dir = Path(output_dir or config.output_dir)
    cells = grid.cells(config)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        prepared = list(pool.map(lambda seed: prepare_seed(config, seed), config.seeds))
        futures = [
            pool.submit(
                _run_cell,
                config,
                prepared,
                parameter,
                value,
                overrides,
                output_dir / "cells" / f"{parameter}_{value}",
            )
            for parameter, value, overrides in cells
        ]
        return [future.result() for future in futures]


def write_sweep(results, output_dir):
    path = Path(output_dir) / "sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for result in results:
            writer.writerow(result.as_row())
    return path


def load_sweep(path):
    with Path(path).open(newline="") as handle:
        return [
            {
                key: value if key in ("parameter", "status") else CsvFormat.parse(value)
                for key, value in row.items()
            }
            for row in csv.DictReader(handle)
        ]
