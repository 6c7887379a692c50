from django.apps import AppConfig


class BitallocConfig(AppConfig):
    name = 'bitalloc'
    verbose_name = "Bit allocation transfer"
