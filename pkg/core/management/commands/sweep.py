from django.core.management.base import BaseCommand, CommandError

from core.config import write_effective_config
from core.exceptions import AgcmError
from core.sweep import SweepGrid, run_sweep, write_sweep

from ._common import (
    CONFIG_ERROR,
    RUNTIME_ERROR,
    add_config_arguments,
    config_from_options,
    jobs_from_options,
)


class Command(BaseCommand):
    help = "Ablation sweep over alpha, similarity metric and margin, one parameter at a time"

    def add_arguments(self, parser):
        add_config_arguments(parser)
        parser.add_argument(
            "--components",
            action="store_true",
            help="Also run baseline, apf-only, margin-only and apf+margin cells",
        )

    def handle(self, *args, **options):
        config = config_from_options(options, "sweep")
        jobs = jobs_from_options(options)
        try:
            grid = SweepGrid.from_config(config, components=options["components"])
        except AgcmError as exc:
            raise CommandError(str(exc), returncode=CONFIG_ERROR) from exc

        try:
            write_effective_config(config)
            results = run_sweep(config, grid, jobs=jobs)
            path = write_sweep(results, config.output_dir)
        except (AgcmError, OSError) as exc:
            raise CommandError(str(exc), returncode=RUNTIME_ERROR) from exc

        failed = [r for r in results if r.status != "ok"]
        for result in failed:
            self.stderr.write(f"{result.parameter}={result.value}: {result.status}")
        self.stdout.write(
            self.style.SUCCESS(f"{len(results) - len(failed)}/{len(results)} cells written to {path}")
        )
