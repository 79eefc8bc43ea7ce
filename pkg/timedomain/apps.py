from django.apps import AppConfig


class TimedomainConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'timedomain'
    verbose_name = 'Time-dependent driven evolution'
