from django.apps import AppConfig


class ForwardConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "forward"
