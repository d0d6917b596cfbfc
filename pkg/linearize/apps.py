from django.apps import AppConfig


class LinearizeConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "linearize"
