from django.apps import AppConfig


class CoreConfig(AppConfig):
    name = "core"
    verbose_name = "AGCM experiment core"

    def ready(self):
        import core.signals  # noqa: F401
