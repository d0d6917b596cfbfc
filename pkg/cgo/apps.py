from django.apps import AppConfig


class CgoConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "cgo"
