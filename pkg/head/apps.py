from django.apps import AppConfig


class HeadConfig(AppConfig):
    name = "head"
    verbose_name = "Classifier head"
