from django import forms
from django.core.exceptions import ValidationError

from apf.fusion import METRICS


def _split(value):
    return [item.strip() for item in value.split(",") if item.strip()]


class ExperimentConfigForm(forms.Form):
    """
    Validates one flat experiment config. Field names are the config keys
    with dots replaced by underscores (``fusion.alpha`` -> ``fusion_alpha``).
    """

    # ── dataset ──────────────────────────────────────────────────────────────
    dataset_d = forms.IntegerField(min_value=1)
    dataset_n_base = forms.IntegerField(min_value=1)
    dataset_n_novel = forms.IntegerField(min_value=0)
    dataset_samples_per_base = forms.IntegerField(min_value=1)
    dataset_k = forms.IntegerField(min_value=1)
    dataset_intra_sigma = forms.FloatField()
    dataset_min_angle_deg = forms.FloatField(max_value=90)
    dataset_confusable_pairs = forms.CharField(required=False)
    dataset_background_rate = forms.FloatField(min_value=0, max_value=0.99)
    dataset_eval_per_class = forms.IntegerField(min_value=1)

    # ── stages ───────────────────────────────────────────────────────────────
    base_epochs = forms.IntegerField(min_value=1)
    base_batch_size = forms.IntegerField(min_value=1)
    base_learning_rate = forms.FloatField(min_value=0)
    adapt_epochs = forms.IntegerField(min_value=1)
    adapt_batch_size = forms.IntegerField(min_value=1)
    adapt_learning_rate = forms.FloatField(min_value=0)
    adapt_freeze_projection = forms.BooleanField(required=False)
    adapt_balanced = forms.BooleanField(required=False)

    # ── mechanisms ───────────────────────────────────────────────────────────
    fusion_alpha = forms.FloatField(min_value=0.5, max_value=1.0)
    fusion_metric = forms.ChoiceField(choices=[(m, m) for m in METRICS])
    fusion_stop_gradient = forms.BooleanField(required=False)
    fusion_fuse_at_eval = forms.BooleanField(required=False)
    loss_margin = forms.FloatField(min_value=-1.0, max_value=1.0)
    loss_beta = forms.FloatField()
    head_feature_dim = forms.IntegerField(min_value=1)

    # ── run and sweep ────────────────────────────────────────────────────────
    run_seeds = forms.CharField()
    run_baseline = forms.BooleanField(required=False)
    sweep_alphas = forms.CharField(required=False)
    sweep_metrics = forms.CharField(required=False)
    sweep_margins = forms.CharField(required=False)

    @staticmethod
    def field_name(key):
        return key.replace(".", "_")

    @classmethod
    def known_keys(cls):
        return {name.replace("_", ".", 1) for name in cls.base_fields}

    def clean_dataset_intra_sigma(self):
        value = self.cleaned_data["dataset_intra_sigma"]
        if not value > 0:
            raise ValidationError("intra_sigma must be positive.", code="min_value")
        return value

    def clean_dataset_min_angle_deg(self):
        value = self.cleaned_data["dataset_min_angle_deg"]
        if not value > 0:
            raise ValidationError("min_angle_deg must be positive.", code="min_value")
        return value

    def clean_loss_beta(self):
        value = self.cleaned_data["loss_beta"]
        if not value > 0:
            raise ValidationError("beta must be positive.", code="min_value")
        return value

    def clean_dataset_confusable_pairs(self):
        """``a:b:angle`` triples separated by ``;``."""
        pairs = []
        for item in self.cleaned_data["dataset_confusable_pairs"].split(";"):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) != 3:
                raise ValidationError(
                    "Confusable pair %(item)s must look like a:b:angle.",
                    code="invalid",
                    params={"item": item},
                )
            try:
                pairs.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError:
                raise ValidationError(
                    "Confusable pair %(item)s is not numeric.",
                    code="invalid",
                    params={"item": item},
                ) from None
        return tuple(pairs)

    def clean_run_seeds(self):
        try:
            seeds = [int(v) for v in _split(self.cleaned_data["run_seeds"])]
        except ValueError:
            raise ValidationError("Seeds must be comma-separated integers.", code="invalid") from None
        if not seeds:
            raise ValidationError("At least one seed is required.", code="required")
        negative = [seed for seed in seeds if seed < 0]
        if negative:
            raise ValidationError(
                "Seed %(seed)s is negative; seeds must be >= 0.",
                code="min_value",
                params={"seed": negative[0]},
            )
        if len(set(seeds)) != len(seeds):
            raise ValidationError("Seeds must be distinct.", code="invalid")
        return seeds

    def clean_sweep_alphas(self):
        try:
            values = [float(v) for v in _split(self.cleaned_data["sweep_alphas"])]
        except ValueError:
            raise ValidationError("Alphas must be numbers.", code="invalid") from None
        bad = [v for v in values if not 0.5 <= v <= 1.0]
        if bad:
            raise ValidationError("Alpha %(value)s is outside [0.5, 1].", params={"value": bad[0]})
        return values

    def clean_sweep_margins(self):
        try:
            values = [float(v) for v in _split(self.cleaned_data["sweep_margins"])]
        except ValueError:
            raise ValidationError("Margins must be numbers.", code="invalid") from None
        bad = [v for v in values if not -1.0 <= v <= 1.0]
        if bad:
            raise ValidationError("Margin %(value)s is outside [-1, 1].", params={"value": bad[0]})
        return values

    def clean_sweep_metrics(self):
        values = _split(self.cleaned_data["sweep_metrics"])
        bad = [v for v in values if v not in METRICS]
        if bad:
            raise ValidationError("Unknown metric %(value)s.", params={"value": bad[0]})
        return values

    def error_summary(self):
        lines = []
        for name, errors in self.errors.items():
            key = name.replace("_", ".", 1)
            lines.extend(f"{key}: {error}" for error in errors)
        return "; ".join(lines)
