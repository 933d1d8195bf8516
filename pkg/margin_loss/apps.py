from django.apps import AppConfig


class MarginLossAppConfig(AppConfig):
    name = "margin_loss"
    verbose_name = "Cosine margin cross-entropy"
