"""
Lazy access to project settings from library code.
"""
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured


def get_setting(name, default):
    """
    Return ``settings.<name>``, or ``default`` when the setting is missing
    or Django settings are not configured (plain library use).
    """
    try:
        return getattr(settings, name, default)
    except ImproperlyConfigured:
        return default


def resolve_workers(workers=None):
    """Explicit worker count, else ``GIFT_WORKERS``; never below 1."""
    if workers is None:
        workers = get_setting('GIFT_WORKERS', 1)
    return max(1, int(workers))
