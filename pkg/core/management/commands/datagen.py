from dataclasses import replace

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import AgcmError
from synthdata.generator import generate
from synthdata.storage import save_csv

from ._common import RUNTIME_ERROR, add_config_arguments, config_from_options


class Command(BaseCommand):
    help = "Generate the synthetic base, K-shot and eval splits as CSV files"

    def add_arguments(self, parser):
        add_config_arguments(parser)

    def handle(self, *args, **options):
        config = config_from_options(options, "datagen")
        seed = config.seeds[0]
        out = config.output_dir
        try:
            splits = generate(replace(config.dataset, seed=seed))
            for name, dataset in zip(("base", "kshot", "eval"), splits):
                path = save_csv(dataset, out / f"{name}.csv")
                self.stdout.write(f"{name}: {len(dataset)} rows -> {path}")
        except (AgcmError, OSError) as exc:
            raise CommandError(str(exc), returncode=RUNTIME_ERROR) from exc
        self.stdout.write(self.style.SUCCESS(f"Seed {seed} datasets written to {out}"))
