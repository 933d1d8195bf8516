import json

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import AgcmError
from head.checkpoint import load_head
from metrics.evaluation import evaluate, forgetting, group_accuracies
from synthdata.storage import load_csv

from ._common import CONFIG_ERROR, RUNTIME_ERROR, add_jobs_argument, jobs_from_options, output_dir


class Command(BaseCommand):
    help = "Recompute confusion, accuracies and forgetting from saved checkpoints"

    def add_arguments(self, parser):
        parser.add_argument("--checkpoint", required=True, help="Adapted head checkpoint")
        parser.add_argument("--eval", required=True, help="Eval split CSV")
        parser.add_argument(
            "--base-checkpoint", help="Base-trained head; enables the forgetting report"
        )
        parser.add_argument(
            "--n-base", type=int, help="Number of base classes (default: from --base-checkpoint)"
        )
        parser.add_argument("--out", help="Output directory (default: $AGCM_OUTPUT_ROOT/report)")
        add_jobs_argument(parser)

    def handle(self, *args, **options):
        if options["base_checkpoint"] is None and options["n_base"] is None:
            raise CommandError("Give --n-base or --base-checkpoint", returncode=CONFIG_ERROR)
        jobs = jobs_from_options(options)
        out = output_dir(options, "report")

        try:
            head = load_head(options["checkpoint"])
            evaluation = load_csv(options["eval"], split="eval")
            base_head = load_head(options["base_checkpoint"]) if options["base_checkpoint"] else None
            n_base = options["n_base"] if options["n_base"] is not None else base_head.background_index

            report = evaluate(head, evaluation, n_base, jobs=jobs)
            record = {
                "checkpoint": str(options["checkpoint"]),
                "base_acc": report.base_acc,
                "novel_acc": report.novel_acc,
                "confusion_pct": report.confusion_pct,
            }
            if base_head is not None:
                acc_before, _ = group_accuracies(base_head, evaluation, n_base)
                drop = forgetting(acc_before, report.base_acc, report.novel_acc)
                record.update(base_acc_before=acc_before, forgetting_pct=drop.percent_drop)

            out.mkdir(parents=True, exist_ok=True)
            report.confusion.save_csv(out / "confusion.csv")
            with (out / "report.jsonl").open("a") as handle:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        except (AgcmError, OSError) as exc:
            raise CommandError(str(exc), returncode=RUNTIME_ERROR) from exc

        self.stdout.write(json.dumps(record, sort_keys=True))
        self.stdout.write(self.style.SUCCESS(f"Report written to {out}"))
