from django.apps import AppConfig


class VoteMapsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "vote_maps"
