"""
Experiment orchestration: per seed, generate data, base-train once, then
adapt the AGCM head (and optionally the mechanism-free baseline) from the
same base head, evaluate, and write artifacts. With fused evaluation on,
the base accuracy before adaptation is measured fused as well, against
the same context rows.

Layout under the output directory::

    effective.cfg
    summary.csv, summary.jsonl
    seed_<s>/base_head.bin (+ .json), base_log.csv
    seed_<s>/<variant>/head.bin (+ .json), adapt_log.csv, confusion.csv
"""

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from core.utils import Aggregates, CsvFormat
from head.checkpoint import save_head
from head.classifier import project
from metrics.evaluation import cluster_stats, evaluate, forgetting, group_accuracies
from synthdata.generator import BACKGROUND_LABEL, generate
from trainer.batching import make_batches
from trainer.stages import base_train, few_shot_adapt

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "variant",
    "seed",
    "base_acc_before",
    "base_acc",
    "novel_acc",
    "forgetting_pct",
    "confusion_pct",
)
METRIC_COLUMNS = SUMMARY_COLUMNS[2:]
VARIANTS = ("agcm", "baseline")


@dataclass(frozen=True, eq=False)
class PreparedSeed:
    """Everything the adapt stage needs from one seed's base stage."""

    seed: int
    spec: object
    kshot: object
    evaluation: object
    head: object
    acc_before: float


def seed_dir(output_dir, seed):
    return Path(output_dir) / f"seed_{seed}"


def prepare_seed(config, seed, output_dir=None):
    spec, base_cfg, _ = config.for_seed(seed)
    base, kshot, evaluation = generate(spec)
    head, log = base_train(base, base_cfg)
    acc_before, _ = group_accuracies(head, evaluation, spec.n_base)
    if output_dir is not None:
        directory = seed_dir(output_dir, seed)
        save_head(head, directory / "base_head.bin")
        log.save_csv(directory / "base_log.csv")
    return PreparedSeed(seed, spec, kshot, evaluation, head, acc_before)


def eval_context(prepared, stage_cfg, background_index):
    """Class-balanced context rows for fused evaluation."""
    batches = make_batches(
        prepared.evaluation,
        stage_cfg.batch_size,
        seed=[prepared.seed, 3],
        balanced=True,
        background_index=background_index,
    )
    return batches[0] if batches else None


def fused_acc_before(prepared, stage_cfg, context):
    """Base accuracy of the base-trained head, fused against ``context``."""
    head = prepared.head.with_configs(fusion=stage_cfg.fusion)
    acc_before, _ = group_accuracies(
        head, prepared.evaluation, prepared.spec.n_base, fuse_at_eval=True, context=context
    )
    return acc_before


def _cluster_summary(head, evaluation):
    real = evaluation.labels != BACKGROUND_LABEL
    stats = cluster_stats(project(head, evaluation.embeddings[real]), evaluation.labels[real])
    return {
        "mean_intra_variance": float(np.mean(list(stats.intra_variance.values()))),
        "min_centroid_angle_deg": stats.min_angle_deg,
    }


def adapt_variant(prepared, variant, stage_cfg, output_dir=None, jobs=1):
    """Adapt ``prepared.head`` with ``stage_cfg`` and return one summary row."""
    spec = prepared.spec
    head, log = few_shot_adapt(
        prepared.head, prepared.kshot, stage_cfg, k=spec.k, monitor=prepared.evaluation
    )
    context = None
    acc_before = prepared.acc_before
    if stage_cfg.fusion.fuse_at_eval:
        context = eval_context(prepared, stage_cfg, head.background_index)
        acc_before = fused_acc_before(prepared, stage_cfg, context)
    report = evaluate(
        head,
        prepared.evaluation,
        spec.n_base,
        fuse_at_eval=stage_cfg.fusion.fuse_at_eval,
        context=context,
        jobs=jobs,
    )
    drop = forgetting(acc_before, report.base_acc, report.novel_acc)

    if output_dir is not None:
        directory = seed_dir(output_dir, prepared.seed) / variant
        save_head(head, directory / "head.bin")
        log.save_csv(directory / "adapt_log.csv")
        report.confusion.save_csv(directory / "confusion.csv")

    row = {
        "variant": variant,
        "seed": prepared.seed,
        "base_acc_before": acc_before,
        "base_acc": report.base_acc,
        "novel_acc": report.novel_acc,
        "forgetting_pct": drop.percent_drop,
        "confusion_pct": report.confusion_pct,
    }
    extras = {"audit": stage_cfg.audit(), **_cluster_summary(head, prepared.evaluation)}
    return row, extras


def variants_for(config):
    variants = [("agcm", config.adapt_stage)]
    if config.baseline:
        variants.append(("baseline", config.baseline_stage()))
    return variants


def run_seed(config, seed, output_dir=None):
    prepared = prepare_seed(config, seed, output_dir)
    results = []
    for variant, stage_cfg in variants_for(config):
        stage_cfg = replace(stage_cfg, seed=seed)
        results.append(adapt_variant(prepared, variant, stage_cfg, output_dir))
    logger.info("seed %s finished", seed)
    return results


def run_experiment(config, jobs=1, output_dir=None):
    """
    Run every seed on a pool of ``jobs`` worker threads. Rows come back in
    (variant, seed) order whatever the scheduling.
    """
    output_dir = Path(output_dir or config.output_dir)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_seed = list(pool.map(lambda seed: run_seed(config, seed, output_dir), config.seeds))
    results = [item for seed_results in per_seed for item in seed_results]
    results.sort(key=lambda item: (VARIANTS.index(item[0]["variant"]), item[0]["seed"]))
    return results


# ── summaries ────────────────────────────────────────────────────────────────


def aggregate_rows(rows):
    """Mean and sample std per variant, in first-seen variant order."""
    aggregates = []
    variants = list(dict.fromkeys(row["variant"] for row in rows))
    for variant in variants:
        members = [row for row in rows if row["variant"] == variant]
        for label, statistic in (("mean", Aggregates.mean), ("std", Aggregates.std)):
            aggregate = {"variant": variant, "seed": label}
            aggregate.update({name: statistic([m[name] for m in members]) for name in METRIC_COLUMNS})
            aggregates.append(aggregate)
    return aggregates


def write_summary(results, output_dir):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rows = [row for row, _ in results]

    csv_path = output_dir / "summary.csv"
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows + aggregate_rows(rows):
            writer.writerow(
                [row["variant"], row["seed"]] + [CsvFormat.number(row[c]) for c in METRIC_COLUMNS]
            )

    jsonl_path = output_dir / "summary.jsonl"
    with jsonl_path.open("w") as handle:
        for row, extras in results:
            handle.write(json.dumps({**row, **extras}, sort_keys=True) + "\n")
    return csv_path


def load_summary(path):
    with Path(path).open(newline="") as handle:
        return [
            {key: CsvFormat.parse(value) if key != "variant" else value for key, value in row.items()}
            for row in csv.DictReader(handle)
        ]
