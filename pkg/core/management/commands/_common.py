from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from core.config import load_config
from core.exceptions import AgcmError

CONFIG_ERROR = 1
RUNTIME_ERROR = 2
GRADIENT_ERROR = 3


def add_config_arguments(parser):
    parser.add_argument("--config", help="Experiment config file (key = value lines)")
    parser.add_argument("--out", help="Output directory (default: $AGCM_OUTPUT_ROOT/<command>)")
    parser.add_argument("--seed", type=int, help="Run a single seed (>= 0) instead of run.seeds")
    parser.add_argument("--alpha", type=float, help="Fusion alpha, in [0.5, 1]")
    parser.add_argument("--margin", type=float, help="Cosine margin m, in [-1, 1]")
    parser.add_argument("--beta", type=float, help="Logit scale beta")
    parser.add_argument("--metric", help="Fusion similarity: cosine, neg-euclidean or pearson")
    parser.add_argument("--k", type=int, help="Shots per class for adaptation")
    add_jobs_argument(parser)


def add_jobs_argument(parser):
    parser.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="Worker threads (default: $AGCM_JOBS)",
    )


def jobs_from_options(options):
    jobs = options.get("jobs")
    if jobs is None:
        jobs = settings.AGCM_JOBS
    if jobs < 1:
        raise CommandError("--jobs must be >= 1", returncode=CONFIG_ERROR)
    return jobs


def output_dir(options, command):
    return Path(options.get("out") or Path(settings.AGCM_OUTPUT_ROOT) / command)


def config_from_options(options, command):
    flags = {name: options.get(name) for name in ("alpha", "margin", "beta", "metric", "k", "seed")}
    try:
        return load_config(options.get("config"), output_dir(options, command), flags)
    except AgcmError as exc:
        raise CommandError(str(exc), returncode=CONFIG_ERROR) from exc
