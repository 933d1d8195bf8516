import argparse

from django.core.management.base import BaseCommand, CommandError

from core.gradsuite import DEFAULT_TOL, run_suites

from ._common import CONFIG_ERROR, GRADIENT_ERROR


class Command(BaseCommand):
    help = "Check every analytic gradient against central finite differences"

    def add_arguments(self, parser):
        parser.add_argument("--seed", type=int, default=0, help="Base seed (default: 0)")
        parser.add_argument(
            "--count", type=int, default=100, help="Seeded points per suite (default: 100)"
        )
        parser.add_argument(
            "--tol", type=float, default=DEFAULT_TOL, help="Max relative error (default: 1e-4)"
        )
        parser.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    def handle(self, *args, **options):
        if options["count"] < 1:
            raise CommandError("--count must be >= 1", returncode=CONFIG_ERROR)
        if options["seed"] < 0:
            raise CommandError("--seed must be >= 0", returncode=CONFIG_ERROR)

        results = run_suites(
            seed=options["seed"],
            count=options["count"],
            tol=options["tol"],
            corrupt=options["corrupt"],
        )
        for result in results:
            label, report = result.worst
            line = f"{result.name:>17}: {len(result.reports)} checks, worst [{label}] {report.describe()}"
            self.stdout.write(self.style.SUCCESS(line) if result.passed else self.style.ERROR(line))

        failed = [result for result in results if not result.passed]
        if failed:
            label, report = failed[0].worst
            raise CommandError(
                f"Gradient check failed in {', '.join(r.name for r in failed)}; "
                f"worst offender {failed[0].name} [{label}] {report.describe()}",
                returncode=GRADIENT_ERROR,
            )
