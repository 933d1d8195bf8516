from django.apps import AppConfig


class DiffcoreConfig(AppConfig):
    name = "diffcore"
    verbose_name = "Differentiable primitives"
