from django.apps import AppConfig


class InverseConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "inverse"
