from django.apps import AppConfig


class ApfConfig(AppConfig):
    name = "apf"
    verbose_name = "Attentive Proposal Fusion"
