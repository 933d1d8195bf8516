from django.core.management.base import BaseCommand, CommandError

from core.config import write_effective_config
from core.exceptions import AgcmError
from core.experiment import aggregate_rows, run_experiment, write_summary

from ._common import RUNTIME_ERROR, add_config_arguments, config_from_options, jobs_from_options


class Command(BaseCommand):
    help = "Base-train, few-shot adapt and evaluate one configuration over its seeds"

    def add_arguments(self, parser):
        add_config_arguments(parser)

    def handle(self, *args, **options):
        config = config_from_options(options, "run")
        jobs = jobs_from_options(options)
        out = config.output_dir

        try:
            write_effective_config(config)
            results = run_experiment(config, jobs=jobs, output_dir=out)
            summary = write_summary(results, out)
        except (AgcmError, OSError) as exc:
            raise CommandError(str(exc), returncode=RUNTIME_ERROR) from exc

        for row in aggregate_rows([row for row, _ in results]):
            if row["seed"] != "mean":
                continue
            self.stdout.write(
                f"{row['variant']:>9}: base {row['base_acc']:.4f}  novel {row['novel_acc']:.4f}  "
                f"forgetting {row['forgetting_pct']:.2f}%  confusion {row['confusion_pct']:.2f}%"
            )
        self.stdout.write(self.style.SUCCESS(f"Summary written to {summary}"))
