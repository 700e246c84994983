"""
Production settings for the GIFT reconstruction project.
Used for long benchmark sweeps on shared compute nodes.
"""
from .base import *

DEBUG = False

# Database - keep run history next to the benchmark outputs
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('DB_PATH', default=str(BASE_DIR / 'db.sqlite3')),
    }
}

GIFT_WORKERS = config('GIFT_WORKERS', default=os.cpu_count() or 1, cast=int)
PROJECTOR_CACHE_MB = config('PROJECTOR_CACHE_MB', default=2048, cast=int)

# Logging - only warnings and errors from Django itself
LOGGING['loggers']['django']['level'] = 'WARNING'
LOGGING['loggers']['apps']['level'] = config('DJANGO_LOG_LEVEL', default='INFO')

# Error reporting for unattended sweeps
SENTRY_DSN = config('SENTRY_DSN', default='')

if SENTRY_DSN:
    import sentry_sdk

    sentry_sdk.init(
        dsn=SENTRY_DSN,
        environment='production',
        traces_sample_rate=0.0,
    )
