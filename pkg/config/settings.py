# config/settings.py
from pathlib import Path
from decouple import config

BASE_DIR = Path(__file__).resolve().parent.parent

# Core
SECRET_KEY = config('SECRET_KEY', default='bitalloc-local')
DEBUG = config('DEBUG', default=False, cast=bool)
ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'bitalloc.apps.BitallocConfig',
]

# No database: every command works on files
DATABASES = {}

USE_I18N = False
USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Bit allocation defaults (used when a command flag is omitted)
BITALLOC_SETTINGS = {
    'TOOL_VERSION': '1.0.0',
    'BLOCK_SIZE': 64,
    'BETA': -1.367,
    'SLOPE': 1.0,
    'CLAMP': 4,
    'N_CONST': 3,
    'EPS': 1e-6,
    # base QP -> lambda used when the step model was rate-aligned
    'LAMBDA_TABLE': {37: 1.0, 32: 4.0, 27: 8.0, 22: 16.0},
    'RD_QPS': (22, 27, 32, 37),
}

# Logging
LOG_DIR = Path(config('LOG_DIR', default=str(BASE_DIR / 'logs')))
LOG_LEVEL = config('LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            # stdout is reserved for CSV/JSON results
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose',
        },
        'file': {
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOG_DIR / 'bitalloc.log',
            'maxBytes': 1024 * 1024 * 5,  # 5 MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': LOG_LEVEL,
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'WARNING',
            'propagate': False,
        },
        'bitalloc': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG' if DEBUG else LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Create logs directory
LOG_DIR.mkdir(parents=True, exist_ok=True)
