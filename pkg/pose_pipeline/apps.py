from django.apps import AppConfig


class PosePipelineConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "pose_pipeline"
