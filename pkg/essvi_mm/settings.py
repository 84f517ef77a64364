"""
Django settings for the essvi_mm project.

Solo se usa el sistema de comandos de Django (train, diag, plot_data) y la
validación de Django REST Framework; no hay base de datos, vistas ni urls.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Los comandos no firman nada; la clave solo existe porque Django la exige
SECRET_KEY = os.environ.get('SECRET_KEY') or 'essvi-mm-local-key'

DEBUG = os.environ.get('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'lab',
]

# Sin base de datos: todos los artefactos son CSV/JSON en disco
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Configuración del laboratorio

# Directorio por defecto para artefactos cuando no se pasa --out
ESSVI_MM_OUTPUT_DIR = Path(os.environ.get('ESSVI_MM_OUTPUT_DIR', BASE_DIR / 'runs'))

ESSVI_MM_LOG_LEVEL = os.environ.get('ESSVI_MM_LOG_LEVEL', 'DEBUG' if DEBUG else 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'lab': {
            'handlers': ['console'],
            'level': ESSVI_MM_LOG_LEVEL,
            'propagate': False,
        },
    },
}
