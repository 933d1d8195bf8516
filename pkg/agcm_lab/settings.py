"""
Django settings for the agcm_lab project.

Only management commands and the test runner are used; there is no web
surface and no database.
"""

import os
import dotenv
from pathlib import Path

dotenv.load_dotenv()


BASE_DIR = Path(__file__).resolve().parent.parent

# ---------------------------------------------------------------------------
# SECURITY
# ---------------------------------------------------------------------------
SECRET_KEY = os.environ.get(
    "SECRET_KEY",
    "agcm-lab-insecure-key-not-used-for-signing",
)

DEBUG = os.environ.get("DEBUG", "False") == "True"

ALLOWED_HOSTS = []

# ---------------------------------------------------------------------------
# APPLICATION DEFINITION
# ---------------------------------------------------------------------------
INSTALLED_APPS = [
    # Local apps
    "core",
    "diffcore",
    "apf",
    "margin_loss",
    "head",
    "trainer",
    "synthdata",
    "metrics",
]

MIDDLEWARE = []

# ---------------------------------------------------------------------------
# DATABASE: none, every artifact is a file
# ---------------------------------------------------------------------------
DATABASES = {}

# ---------------------------------------------------------------------------
# INTERNATIONALISATION
# ---------------------------------------------------------------------------
LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# ---------------------------------------------------------------------------
# LOGGING
# ---------------------------------------------------------------------------
AGCM_LOG_LEVEL = os.environ.get("AGCM_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "records": {
            "format": "%(asctime)s %(levelname)s %(name)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "records",
        },
    },
    "root": {"handlers": ["console"], "level": AGCM_LOG_LEVEL},
}

# ---------------------------------------------------------------------------
# OUTPUT AND WORKERS
# ---------------------------------------------------------------------------
AGCM_OUTPUT_ROOT = Path(os.environ.get("AGCM_OUTPUT_ROOT", BASE_DIR / "agcm_runs"))

AGCM_JOBS = int(os.environ.get("AGCM_JOBS", os.cpu_count() or 1))

# ---------------------------------------------------------------------------
# AGCM DEFAULTS
# ---------------------------------------------------------------------------
DEFAULT_ALPHA = 0.8
DEFAULT_MARGIN = 0.2
DEFAULT_BETA = 20.0
DEFAULT_METRIC = "cosine"
DEFAULT_LEARNING_RATE = 0.001

DEFAULT_SEEDS = [0, 1, 2, 3, 4]

# Desk-scale stand-in for a 7 base / 3 novel driving split.
DEFAULT_EXPERIMENT = {
    "dataset.d": "32",
    "dataset.n_base": "7",
    "dataset.n_novel": "3",
    "dataset.samples_per_base": "500",
    "dataset.k": "10",
    "dataset.intra_sigma": "0.25",
    "dataset.min_angle_deg": "25",
    "dataset.confusable_pairs": "6:7:12",
    "dataset.background_rate": "0.1",
    "dataset.eval_per_class": "100",
    "base.epochs": "200",
    "base.batch_size": "32",
    "base.learning_rate": str(DEFAULT_LEARNING_RATE),
    "adapt.epochs": "100",
    "adapt.batch_size": "16",
    "adapt.learning_rate": str(DEFAULT_LEARNING_RATE),
    "adapt.freeze_projection": "true",
    "adapt.balanced": "true",
    "fusion.alpha": str(DEFAULT_ALPHA),
    "fusion.metric": DEFAULT_METRIC,
    "fusion.stop_gradient": "false",
    "fusion.fuse_at_eval": "false",
    "loss.margin": str(DEFAULT_MARGIN),
    "loss.beta": str(DEFAULT_BETA),
    "head.feature_dim": "32",
    "run.seeds": ",".join(str(seed) for seed in DEFAULT_SEEDS),
    "run.baseline": "true",
}

# Ablation grid over alpha, distance and margin.
DEFAULT_SWEEP = {
    "alphas": [0.5, 0.7, 0.8, 0.9, 1.0],
    "metrics": ["neg-euclidean", "cosine", "pearson"],
    "margins": [0.0, 0.1, 0.2, 0.4, 0.8, 1.0],
}

DEFAULT_EXPERIMENT.update(
    {
        "sweep.alphas": ",".join(str(v) for v in DEFAULT_SWEEP["alphas"]),
        "sweep.metrics": ",".join(DEFAULT_SWEEP["metrics"]),
        "sweep.margins": ",".join(str(v) for v in DEFAULT_SWEEP["margins"]),
    }
)
