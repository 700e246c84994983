from django.apps import AppConfig


class GaussiansConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.gaussians'
    verbose_name = 'Gaussian Field'
