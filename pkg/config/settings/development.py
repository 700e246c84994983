"""
Development settings for the GIFT reconstruction project.
These settings are used during local development and testing.
"""
from .base import *

DEBUG = True

# Logging - more verbose in development
LOGGING['loggers']['apps']['level'] = config('DJANGO_LOG_LEVEL', default='DEBUG')
LOGGING['loggers']['django']['level'] = 'INFO'
