from django.apps import AppConfig


class StationaryConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'stationary'
    verbose_name = 'Stationary scattering'
