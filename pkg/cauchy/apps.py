from django.apps import AppConfig


class CauchyConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "cauchy"
