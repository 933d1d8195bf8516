import csv
import json
import shutil
import tempfile
import time
from dataclasses import replace
from io import StringIO
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from core.config import load_config, write_effective_config
from core.exceptions import InvalidConfig
from core.experiment import adapt_variant, eval_context, load_summary, prepare_seed
from core.sweep import SweepGrid, load_sweep
from head.checkpoint import load_head
from metrics.evaluation import ConfusionMatrix, group_accuracies
from synthdata.storage import load_csv
from trainer.stages import TrainLog

TINY_CONFIG = """\
# two well-separated base classes, one novel class
dataset.d = 4
dataset.n_base = 2
dataset.n_novel = 1
dataset.samples_per_base = 50
dataset.k = 5
dataset.intra_sigma = 0.05
dataset.min_angle_deg = 60
dataset.confusable_pairs =
dataset.background_rate = 0.1
dataset.eval_per_class = 10

base.epochs = 20
base.batch_size = 10
base.learning_rate = 0.05
adapt.epochs = 3
adapt.batch_size = 4
adapt.learning_rate = 0.01
head.feature_dim = 4
run.seeds = 0,1
"""


def _read_rows(path):
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def write_config(self, extra="", name="tiny.cfg"):
        path = self.tmp / name
        path.write_text(TINY_CONFIG + extra)
        return path


class ConfigTests(TempDirMixin, SimpleTestCase):
    def test_defaults(self):
        config = load_config(output_dir=self.tmp)
        self.assertEqual(config.adapt_stage.fusion.alpha, 0.8)
        self.assertEqual(config.adapt_stage.fusion.metric, "cosine")
        self.assertEqual(config.adapt_stage.loss_cfg.m, 0.2)
        self.assertEqual(config.adapt_stage.loss_cfg.beta, 20.0)
        self.assertEqual(config.adapt_stage.learning_rate, 0.001)
        self.assertEqual(config.seeds, (0, 1, 2, 3, 4))
        self.assertEqual(config.dataset.confusable_pairs, ((6, 7, 12.0),))
        self.assertEqual(config.base_stage.fusion.alpha, 1.0)
        self.assertEqual(config.base_stage.loss_cfg.m, 0.0)

    def test_file_then_flags(self):
        path = self.write_config("fusion.alpha = 0.9  # inline comment\nloss.margin = 0.4\n")
        config = load_config(path, self.tmp)
        self.assertEqual(config.adapt_stage.fusion.alpha, 0.9)
        self.assertEqual(config.adapt_stage.loss_cfg.m, 0.4)
        self.assertEqual(config.dataset.d, 4)

        config = load_config(path, self.tmp, {"alpha": 0.6, "margin": None, "seed": 3, "k": 2})
        self.assertEqual(config.adapt_stage.fusion.alpha, 0.6)
        self.assertEqual(config.adapt_stage.loss_cfg.m, 0.4)
        self.assertEqual(config.seeds, (3,))
        self.assertEqual(config.dataset.k, 2)

    def test_unknown_key(self):
        path = self.write_config("fusion.temperature = 2\n")
        with self.assertRaises(InvalidConfig) as cm:
            load_config(path, self.tmp)
        self.assertIn("fusion.temperature", str(cm.exception))

    def test_invalid_value(self):
        path = self.write_config("fusion.alpha = 0.3\n")
        with self.assertRaises(InvalidConfig) as cm:
            load_config(path, self.tmp)
        self.assertIn("fusion.alpha", str(cm.exception))

    def test_negative_seed(self):
        path = self.write_config("run.seeds = 0,-2\n")
        with self.assertRaises(InvalidConfig) as cm:
            load_config(path, self.tmp)
        self.assertIn("run.seeds", str(cm.exception))

    def test_missing_file(self):
        with self.assertRaises(InvalidConfig):
            load_config(self.tmp / "absent.cfg", self.tmp)

    def test_effective_config_reloads(self):
        config = load_config(self.write_config(), self.tmp, {"metric": "pearson"})
        path = write_effective_config(config)
        reloaded = load_config(path, self.tmp)
        self.assertEqual(reloaded.values, config.values)
        self.assertEqual(reloaded, config)

    def test_sweep_grid(self):
        config = load_config(output_dir=self.tmp)
        grid = SweepGrid.from_config(config)
        self.assertEqual(len(grid.cells(config)), 5 + 3 + 6)
        self.assertEqual(len(SweepGrid.from_config(config, components=True).cells(config)), 18)
        with self.assertRaises(InvalidConfig):
            SweepGrid(alphas=(0.2,))


class RunCommandTests(TempDirMixin, SimpleTestCase):
    def run_command(self, out, **options):
        call_command("run", config=str(self.write_config()), out=str(out), stdout=StringIO(), **options)
        return out / "summary.csv"

    def test_summary_and_artifacts(self):
        summary = self.run_command(self.tmp / "out", jobs=1)
        rows = _read_rows(summary)
        self.assertEqual(len(rows), 2 * 2 + 2 * 2)
        self.assertEqual(
            [(r["variant"], r["seed"]) for r in rows],
            [
                ("agcm", "0"),
                ("agcm", "1"),
                ("baseline", "0"),
                ("baseline", "1"),
                ("agcm", "mean"),
                ("agcm", "std"),
                ("baseline", "mean"),
                ("baseline", "std"),
            ],
        )
        parsed = load_summary(summary)
        self.assertIsInstance(parsed[0]["novel_acc"], float)

        seed_dir = self.tmp / "out" / "seed_0"
        head = load_head(seed_dir / "agcm" / "head.bin")
        self.assertEqual(head.n_classes, 4)
        self.assertEqual(load_head(seed_dir / "base_head.bin").n_classes, 3)
        self.assertEqual(ConfusionMatrix.load_csv(seed_dir / "agcm" / "confusion.csv").n_classes, 4)
        self.assertEqual(len(TrainLog.load_csv(seed_dir / "agcm" / "adapt_log.csv").records), 3)
        self.assertTrue((self.tmp / "out" / "effective.cfg").is_file())
        with (self.tmp / "out" / "summary.jsonl").open() as handle:
            records = [json.loads(line) for line in handle]
        self.assertEqual(len(records), 4)
        self.assertEqual(records[0]["audit"]["alpha"], 0.8)

    def test_repeatable(self):
        first = self.run_command(self.tmp / "a", jobs=1)
        second = self.run_command(self.tmp / "b", jobs=2)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_missing_config(self):
        missing = self.tmp / "nope.cfg"
        with self.assertRaises(CommandError) as cm:
            call_command("run", config=str(missing), out=str(self.tmp), stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 1)
        self.assertIn(str(missing), str(cm.exception))

    def test_invalid_flag(self):
        with self.assertRaises(CommandError) as cm:
            self.run_command(self.tmp / "out", alpha=0.3)
        self.assertEqual(cm.exception.returncode, 1)

    def test_negative_seed_flag(self):
        with self.assertRaises(CommandError) as cm:
            self.run_command(self.tmp / "out", seed=-1)
        self.assertEqual(cm.exception.returncode, 1)
        self.assertFalse((self.tmp / "out" / "summary.csv").exists())


class SweepCommandTests(TempDirMixin, SimpleTestCase):
    def sweep(self, extra, out, **options):
        path = self.write_config(extra)
        call_command("sweep", config=str(path), out=str(out), stdout=StringIO(), stderr=StringIO(), **options)
        return out / "sweep.csv"

    def test_single_cell_matches_run(self):
        extra = "run.baseline = false\nsweep.alphas = 0.8\nsweep.metrics =\nsweep.margins =\n"
        rows = _read_rows(self.sweep(extra, self.tmp / "sweep", seed=0))
        self.assertEqual(len(rows), 1)

        call_command(
            "run", config=str(self.write_config(extra)), out=str(self.tmp / "run"), seed=0, stdout=StringIO()
        )
        mean = [r for r in _read_rows(self.tmp / "run" / "summary.csv") if r["seed"] == "mean"][0]
        for column in ("base_acc", "novel_acc", "forgetting_pct", "confusion_pct"):
            self.assertEqual(rows[0][column], mean[column])
        self.assertEqual(rows[0]["status"], "ok")

    def test_default_grid_shape(self):
        rows = load_sweep(self.sweep("", self.tmp / "sweep", seed=0, components=True))
        parameters = [row["parameter"] for row in rows]
        self.assertEqual(
            [parameters.count(p) for p in ("alpha", "metric", "margin", "component")], [5, 3, 6, 4]
        )
        self.assertEqual([row["value"] for row in rows if row["parameter"] == "metric"],
                         ["neg-euclidean", "cosine", "pearson"])

    def test_cells_independent_of_order(self):
        first = _read_rows(
            self.sweep("sweep.alphas = 0.9,0.5\nsweep.metrics =\nsweep.margins =\n", self.tmp / "a", seed=0)
        )
        second = _read_rows(
            self.sweep("sweep.alphas = 0.5,0.9\nsweep.metrics =\nsweep.margins =\n", self.tmp / "b", seed=0)
        )
        self.assertEqual(
            sorted(first, key=lambda r: r["value"]), sorted(second, key=lambda r: r["value"])
        )

    def test_failed_cell_is_recorded(self):
        extra = "head.feature_dim = 1\nsweep.alphas =\nsweep.metrics = pearson,cosine\nsweep.margins =\n"
        rows = _read_rows(self.sweep(extra, self.tmp / "sweep", seed=0))
        self.assertEqual(len(rows), 2)
        self.assertTrue(rows[0]["status"].startswith("failed"))


class GradcheckCommandTests(SimpleTestCase):
    def test_passes(self):
        out = StringIO()
        call_command("gradcheck", count=2, seed=1, stdout=out)
        for suite in ("diffcore", "apf", "apf-stop-gradient", "margin", "head"):
            self.assertIn(suite, out.getvalue())

    def test_corrupted_gradient_fails(self):
        with self.assertRaises(CommandError) as cm:
            call_command("gradcheck", count=1, corrupt=True, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 3)
        self.assertIn("margin", str(cm.exception))

    def test_negative_seed_rejected(self):
        with self.assertRaises(CommandError) as cm:
            call_command("gradcheck", seed=-1, count=1, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 1)

    def test_count_zero_rejected(self):
        with self.assertRaises(CommandError) as cm:
            call_command("gradcheck", count=0, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 1)


class DatagenAndReportTests(TempDirMixin, SimpleTestCase):
    def test_datagen_writes_splits(self):
        call_command(
            "datagen", config=str(self.write_config()), out=str(self.tmp / "data"), stdout=StringIO()
        )
        base = load_csv(self.tmp / "data" / "base.csv")
        kshot = load_csv(self.tmp / "data" / "kshot.csv", split="kshot")
        evaluation = load_csv(self.tmp / "data" / "eval.csv", split="eval")
        self.assertEqual(len(base), 110)
        self.assertEqual(kshot.class_counts(), {-1: 5, 0: 5, 1: 5, 2: 5})
        self.assertEqual(len(evaluation), 33)

    def test_report_matches_run_summary(self):
        config = str(self.write_config())
        call_command("run", config=config, out=str(self.tmp / "run"), seed=0, stdout=StringIO())
        call_command("datagen", config=config, out=str(self.tmp / "data"), seed=0, stdout=StringIO())

        out = StringIO()
        call_command(
            "report",
            checkpoint=str(self.tmp / "run" / "seed_0" / "agcm" / "head.bin"),
            base_checkpoint=str(self.tmp / "run" / "seed_0" / "base_head.bin"),
            eval=str(self.tmp / "data" / "eval.csv"),
            out=str(self.tmp / "report"),
            stdout=out,
        )
        record = json.loads(out.getvalue().splitlines()[0])
        row = [r for r in load_summary(self.tmp / "run" / "summary.csv") if r["variant"] == "agcm"][0]
        for column in ("base_acc_before", "base_acc", "novel_acc", "forgetting_pct", "confusion_pct"):
            self.assertAlmostEqual(record[column], row[column], delta=1e-9)
        self.assertTrue((self.tmp / "report" / "confusion.csv").is_file())

    def test_report_needs_base_class_count(self):
        with self.assertRaises(CommandError) as cm:
            call_command("report", checkpoint="a.bin", eval="b.csv", stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 1)


class FusedEvaluationTests(TempDirMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.config = load_config(
            self.write_config("fusion.fuse_at_eval = true\n"), self.tmp, {"seed": 0}
        )
        self.prepared = prepare_seed(self.config, 0)

    def test_base_accuracy_before_is_fused_too(self):
        stage_cfg = replace(self.config.adapt_stage, seed=0)
        row, _ = adapt_variant(self.prepared, "agcm", stage_cfg)

        context = eval_context(self.prepared, stage_cfg, self.config.dataset.n_classes)
        expected, _ = group_accuracies(
            self.prepared.head.with_configs(fusion=stage_cfg.fusion),
            self.prepared.evaluation,
            self.config.dataset.n_base,
            fuse_at_eval=True,
            context=context,
        )
        self.assertEqual(row["base_acc_before"], expected)
        self.assertAlmostEqual(
            row["forgetting_pct"], 100.0 * (expected - row["base_acc"]) / expected, places=9
        )

    def test_identity_fusion_keeps_unfused_accuracy(self):
        stage_cfg = replace(self.config.baseline_stage(), seed=0)
        row, _ = adapt_variant(self.prepared, "baseline", stage_cfg)
        self.assertEqual(row["base_acc_before"], self.prepared.acc_before)


@tag("slow")
class AcceptanceTests(TempDirMixin, SimpleTestCase):
    """Full-size runs; skip with ``manage.py test --exclude-tag slow``."""

    def test_agcm_not_worse_than_baseline_on_default_config(self):
        call_command(
            "run",
            config=str(settings.BASE_DIR / "configs" / "default.cfg"),
            out=str(self.tmp / "run"),
            stdout=StringIO(),
        )
        means = {
            row["variant"]: row
            for row in load_summary(self.tmp / "run" / "summary.csv")
            if row["seed"] == "mean"
        }
        self.assertGreaterEqual(means["agcm"]["novel_acc"], means["baseline"]["novel_acc"])
        self.assertLessEqual(means["agcm"]["forgetting_pct"], means["baseline"]["forgetting_pct"])

    def test_gradcheck_finishes_within_30_seconds(self):
        started = time.perf_counter()
        call_command("gradcheck", count=100, stdout=StringIO())
        self.assertLess(time.perf_counter() - started, 30.0)
