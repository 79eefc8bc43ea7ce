"""
Django settings for the scatterlab project.

Numerical defaults of every laboratory module are declared here and can be
overridden through environment variables. Services read them through
``django.conf.settings``.
"""

from pathlib import Path
import os
from enum import IntEnum


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('SCATTERLAB_SECRET_KEY', 'scatterlab-local-only-key')

DEBUG = os.getenv('SCATTERLAB_DEBUG', '').upper() in ('TRUE', '1', 'Y', 'YES', 'T')

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',

    'domain',
    'resolvent',
    'stationary',
    'timedomain',
    'flux',
    'oracle',
    'experiments',
]

# The laboratory keeps its results on disk; no database is configured.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_TZ = True


class RedisDatabases(IntEnum):
    DEFAULT: int = 0
    CELERY: int = 1
    CELERY_RESULTS: int = 2


REDIS_HOST = os.environ.get('REDIS_HOST', 'redis')
REDIS_PORT = os.environ.get('REDIS_PORT', 6379)
REDIS_PASSWORD = os.environ.get('REDIS_PASSWORD') or None
REDIS_USE_SSL = os.environ.get('REDIS_USE_SSL', '').upper() in ('TRUE', '1', 'Y', 'YES', 'T')

REDIS_PROTOCOL = 'rediss' if REDIS_USE_SSL else 'redis'
REDIS_AUTH = f'default:{REDIS_PASSWORD}@' if REDIS_PASSWORD else ''

REDIS_CONNECTION = {
    'host': REDIS_HOST,
    'port': REDIS_PORT,
    'password': REDIS_PASSWORD,
}

REDIS_CONNECTION_QUERY = '?ssl_cert_reqs=none' if REDIS_USE_SSL else ''
REDIS_CONNECTION_STRING = '{protocol}://{auth}{host}:{port}/%s{query}'.format(
    protocol=REDIS_PROTOCOL,
    auth=REDIS_AUTH,
    **REDIS_CONNECTION,
    query=REDIS_CONNECTION_QUERY,
)

CELERY_TIMEZONE = TIME_ZONE
CELERY_TASK_TRACK_STARTED = True
CELERY_TASK_TIME_LIMIT = int(os.getenv('CELERY_TASK_TIME_LIMIT', 2 * 60 * 60))
CELERY_BROKER_URL = REDIS_CONNECTION_STRING % int(RedisDatabases.CELERY)
CELERY_RESULT_BACKEND = REDIS_CONNECTION_STRING % int(RedisDatabases.CELERY_RESULTS)
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TASK_DEFAULT_QUEUE = 'celery'
SCATTERLAB_EXPERIMENT_QUEUE = os.getenv('SCATTERLAB_EXPERIMENT_QUEUE', 'experiments')


# Laboratory defaults

SCATTERLAB_OUTPUT_DIR = os.getenv('SCATTERLAB_OUTPUT_DIR', str(BASE_DIR / 'runs'))
SCATTERLAB_WORKERS = int(os.getenv('SCATTERLAB_WORKERS', 4))

# domain: grids, catalog and hypothesis validators
SCATTERLAB_SUPPORT_TOL = float(os.getenv('SCATTERLAB_SUPPORT_TOL', 1e-12))
SCATTERLAB_MAX_SUPPORT_RADIUS = float(os.getenv('SCATTERLAB_MAX_SUPPORT_RADIUS', 50.0))
SCATTERLAB_ENVELOPE_EPS = float(os.getenv('SCATTERLAB_ENVELOPE_EPS', 0.5))
SCATTERLAB_VALIDATOR_CLOUD_SIZE = int(os.getenv('SCATTERLAB_VALIDATOR_CLOUD_SIZE', 4096))
SCATTERLAB_VALIDATOR_STEP = float(os.getenv('SCATTERLAB_VALIDATOR_STEP', 1e-3))
SCATTERLAB_DIRECTION_GRID_POINTS = int(os.getenv('SCATTERLAB_DIRECTION_GRID_POINTS', 110))
SCATTERLAB_WIENER_TOL = float(os.getenv('SCATTERLAB_WIENER_TOL', 1e-8))

# resolvent: quadrature
SCATTERLAB_QUADRATURE_RTOL = float(os.getenv('SCATTERLAB_QUADRATURE_RTOL', 1e-6))
SCATTERLAB_ASSEMBLY_BLOCK_ROWS = int(os.getenv('SCATTERLAB_ASSEMBLY_BLOCK_ROWS', 512))
SCATTERLAB_REMAINDER_SLOPE = float(os.getenv('SCATTERLAB_REMAINDER_SLOPE', -2.0))
SCATTERLAB_REMAINDER_SLOPE_TOL = float(os.getenv('SCATTERLAB_REMAINDER_SLOPE_TOL', 0.3))

# stationary: Lippmann-Schwinger solves
SCATTERLAB_SOLVER_TOL = float(os.getenv('SCATTERLAB_SOLVER_TOL', 1e-8))
SCATTERLAB_DIRECT_SOLVE_MAX_UNKNOWNS = int(os.getenv('SCATTERLAB_DIRECT_SOLVE_MAX_UNKNOWNS', 20000))
SCATTERLAB_KRYLOV_RESTART = int(os.getenv('SCATTERLAB_KRYLOV_RESTART', 60))
SCATTERLAB_KRYLOV_MAXITER = int(os.getenv('SCATTERLAB_KRYLOV_MAXITER', 200))
SCATTERLAB_BORN_MAX_RADIUS = float(os.getenv('SCATTERLAB_BORN_MAX_RADIUS', 0.9))
SCATTERLAB_BORN_MAXITER = int(os.getenv('SCATTERLAB_BORN_MAXITER', 500))
SCATTERLAB_CONDITION_WARNING = float(os.getenv('SCATTERLAB_CONDITION_WARNING', 1e10))
SCATTERLAB_WEIGHT_SIGMA = float(os.getenv('SCATTERLAB_WEIGHT_SIGMA', 2.6))
SCATTERLAB_CONVERGENCE_SLOPE = float(os.getenv('SCATTERLAB_CONVERGENCE_SLOPE', -0.8))
SCATTERLAB_OPTICAL_THEOREM_RTOL = float(os.getenv('SCATTERLAB_OPTICAL_THEOREM_RTOL', 0.02))
SCATTERLAB_IDENTITY_RTOL = float(os.getenv('SCATTERLAB_IDENTITY_RTOL', 1e-12))

# timedomain: driven Crank-Nicolson evolution
SCATTERLAB_DT_FACTOR = float(os.getenv('SCATTERLAB_DT_FACTOR', 0.2))
SCATTERLAB_SNAPSHOTS_PER_PERIOD = int(os.getenv('SCATTERLAB_SNAPSHOTS_PER_PERIOD', 16))
SCATTERLAB_ABSORBER_FRACTION = float(os.getenv('SCATTERLAB_ABSORBER_FRACTION', 0.15))
SCATTERLAB_ABSORBER_REFLECTION = float(os.getenv('SCATTERLAB_ABSORBER_REFLECTION', 1e-3))
SCATTERLAB_SOURCE_DISTANCE_FRACTION = float(os.getenv('SCATTERLAB_SOURCE_DISTANCE_FRACTION', 0.3))
SCATTERLAB_BLOWUP_FACTOR = float(os.getenv('SCATTERLAB_BLOWUP_FACTOR', 10.0))
SCATTERLAB_STEP_SOLVER_RTOL = float(os.getenv('SCATTERLAB_STEP_SOLVER_RTOL', 1e-13))
SCATTERLAB_STEP_DIRECT_MAX_CELLS = int(os.getenv('SCATTERLAB_STEP_DIRECT_MAX_CELLS', 40 ** 3))
SCATTERLAB_LIMIT_AMPLITUDE_RTOL = float(os.getenv('SCATTERLAB_LIMIT_AMPLITUDE_RTOL', 0.05))
SCATTERLAB_LIMIT_WINDOW_PERIODS = float(os.getenv('SCATTERLAB_LIMIT_WINDOW_PERIODS', 3))

# flux: observables
SCATTERLAB_FLUX_MATCH_RTOL = float(os.getenv('SCATTERLAB_FLUX_MATCH_RTOL', 0.05))
SCATTERLAB_TRIANGULATION_RTOL = float(os.getenv('SCATTERLAB_TRIANGULATION_RTOL', 0.05))
SCATTERLAB_FLUX_SLOPE = float(os.getenv('SCATTERLAB_FLUX_SLOPE', -1.0))
SCATTERLAB_FLUX_SLOPE_TOL = float(os.getenv('SCATTERLAB_FLUX_SLOPE_TOL', 0.3))

# oracle: radial partial waves
SCATTERLAB_NUMEROV_DR = float(os.getenv('SCATTERLAB_NUMEROV_DR', 0.01))
SCATTERLAB_PHASE_SHIFT_TOL = float(os.getenv('SCATTERLAB_PHASE_SHIFT_TOL', 1e-8))
SCATTERLAB_MAX_PARTIAL_WAVE = int(os.getenv('SCATTERLAB_MAX_PARTIAL_WAVE', 80))
SCATTERLAB_TRUNCATION_TOL = float(os.getenv('SCATTERLAB_TRUNCATION_TOL', 1e-6))
SCATTERLAB_ORACLE_RMS_TOL = float(os.getenv('SCATTERLAB_ORACLE_RMS_TOL', 0.01))


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'celery': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'domain': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'resolvent': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'stationary': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'timedomain': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'flux': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'oracle': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'experiments': {
            'handlers': ['console'],
            'level': os.getenv('SCATTERLAB_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
}
