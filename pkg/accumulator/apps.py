from django.apps import AppConfig


class AccumulatorConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "accumulator"
