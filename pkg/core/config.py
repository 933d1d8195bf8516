"""
Experiment configuration.

Config files are flat ``key = value`` lines with dotted section prefixes;
``#`` starts a comment. Values are layered: settings defaults, then the
file, then command-line flags. The merged string values are validated by
``ExperimentConfigForm`` and turned into typed domain objects.
"""

from dataclasses import dataclass, replace
from pathlib import Path

from django.conf import settings
from dotenv import dotenv_values

from apf.fusion import FusionConfig
from core.exceptions import InvalidConfig
from core.forms import ExperimentConfigForm
from margin_loss.loss import MarginLossConfig
from synthdata.generator import DatasetSpec
from trainer.stages import StageConfig

EFFECTIVE_CONFIG_NAME = "effective.cfg"

# Command-line flag -> config key.
FLAG_KEYS = {
    "alpha": "fusion.alpha",
    "margin": "loss.margin",
    "beta": "loss.beta",
    "metric": "fusion.metric",
    "k": "dataset.k",
    "seed": "run.seeds",
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    base_stage: StageConfig
    adapt_stage: StageConfig
    output_dir: Path
    seeds: tuple
    baseline: bool = True
    sweep: dict | None = None
    values: dict | None = None

    def for_seed(self, seed):
        """Dataset spec and stage configs with every seed set to ``seed``."""
        return (
            replace(self.dataset, seed=seed),
            replace(self.base_stage, seed=seed),
            replace(self.adapt_stage, seed=seed),
        )

    def with_values(self, **overrides):
        """Rebuild from the stored values with dotted-key overrides."""
        values = dict(self.values)
        values.update({key: str(value) for key, value in overrides.items()})
        return build_config(values, self.output_dir)

    def baseline_stage(self):
        """The adapt stage with both mechanisms switched off."""
        return replace(
            self.adapt_stage,
            fusion=replace(self.adapt_stage.fusion, alpha=1.0),
            loss_cfg=replace(self.adapt_stage.loss_cfg, m=0.0),
        )


def read_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig("Config file %(path)s does not exist.", params={"path": path})
    values = dotenv_values(path, interpolate=False)
    missing = sorted(key for key, value in values.items() if value is None)
    if missing:
        raise InvalidConfig(
            "%(path)s: keys without a value: %(keys)s.",
            params={"path": path, "keys": ", ".join(missing)},
        )
    return values


def merge_values(file_values=None, flags=None):
    values = dict(settings.DEFAULT_EXPERIMENT)
    unknown = sorted(set(file_values or {}) - ExperimentConfigForm.known_keys())
    if unknown:
        raise InvalidConfig("Unknown config keys: %(keys)s.", params={"keys": ", ".join(unknown)})
    values.update(file_values or {})
    for flag, value in (flags or {}).items():
        if value is not None:
            values[FLAG_KEYS[flag]] = str(value)
    return values


def build_config(values, output_dir):
    form = ExperimentConfigForm(
        data={ExperimentConfigForm.field_name(key): value for key, value in values.items()}
    )
    if not form.is_valid():
        raise InvalidConfig("Invalid config: %(errors)s", params={"errors": form.error_summary()})
    data = form.cleaned_data

    dataset = DatasetSpec(
        d=data["dataset_d"],
        n_base=data["dataset_n_base"],
        n_novel=data["dataset_n_novel"],
        samples_per_base=data["dataset_samples_per_base"],
        k=data["dataset_k"],
        intra_sigma=data["dataset_intra_sigma"],
        min_angle_deg=data["dataset_min_angle_deg"],
        confusable_pairs=data["dataset_confusable_pairs"],
        background_rate=data["dataset_background_rate"],
        eval_per_class=data["dataset_eval_per_class"],
    )
    fusion = FusionConfig(
        alpha=data["fusion_alpha"],
        metric=data["fusion_metric"],
        stop_gradient=data["fusion_stop_gradient"],
        fuse_at_eval=data["fusion_fuse_at_eval"],
    )
    loss_cfg = MarginLossConfig(m=data["loss_margin"], beta=data["loss_beta"])
    base_stage = StageConfig.base(
        epochs=data["base_epochs"],
        batch_size=data["base_batch_size"],
        learning_rate=data["base_learning_rate"],
        fusion=FusionConfig.disabled(),
        loss_cfg=MarginLossConfig.plain(beta=data["loss_beta"]),
        feature_dim=data["head_feature_dim"],
    )
    adapt_stage = StageConfig(
        stage="adapt",
        epochs=data["adapt_epochs"],
        batch_size=data["adapt_batch_size"],
        learning_rate=data["adapt_learning_rate"],
        fusion=fusion,
        loss_cfg=loss_cfg,
        freeze_projection=data["adapt_freeze_projection"],
        balanced=data["adapt_balanced"],
        feature_dim=data["head_feature_dim"],
    )
    sweep = {
        "alphas": data["sweep_alphas"],
        "metrics": data["sweep_metrics"],
        "margins": data["sweep_margins"],
    }
    return ExperimentConfig(
        dataset=dataset,
        base_stage=base_stage,
        adapt_stage=adapt_stage,
        output_dir=Path(output_dir),
        seeds=tuple(data["run_seeds"]),
        baseline=data["run_baseline"],
        sweep=sweep,
        values=dict(values),
    )


def load_config(path=None, output_dir=None, flags=None):
    file_values = read_config_file(path) if path else {}
    values = merge_values(file_values, flags)
    return build_config(values, output_dir or settings.AGCM_OUTPUT_ROOT)


def dumps_config(config):
    lines = ["# effective configuration"]
    lines += [f"{key} = {config.values[key]}" for key in sorted(config.values)]
    return "\n".join(lines) + "\n"


def write_effective_config(config, directory=None):
    directory = Path(directory or config.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / EFFECTIVE_CONFIG_NAME
    path.write_text(dumps_config(config))
    return path
