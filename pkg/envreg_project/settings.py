"""
Django settings for envreg_project
Command-line only: no request handling, no database.
"""

import os
from pathlib import Path

# --------------------------------------------------
# BASE DIR
# --------------------------------------------------
BASE_DIR = Path(__file__).resolve().parent.parent

# --------------------------------------------------
# CORE
# --------------------------------------------------
# Required by Django; nothing here is signed or served.
SECRET_KEY = os.environ.get('SECRET_KEY', 'envreg-command-line-only')

DEBUG = os.environ.get('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# --------------------------------------------------
# APPLICATIONS
# --------------------------------------------------
INSTALLED_APPS = [
    'envelope',
]

# --------------------------------------------------
# DATABASE
# --------------------------------------------------
DATABASES = {}

# --------------------------------------------------
# INTERNATIONALIZATION
# --------------------------------------------------
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# --------------------------------------------------
# ENVELOPE DEFAULTS
# --------------------------------------------------
# Lowest-precedence layer of every run configuration:
# command-line flag > --config file > these values.
ENVELOPE = {
    'fit': {
        's': 0,
        'K': 1,
        'em_max_iters': 50,
        'em_tol': 1e-3,
        'objective': 'spiked',
        'seed': 0,
        'threads': 1,
    },
    'mcmc': {
        'n_iter': 2000,
        'burn': 1000,
        'thin': 1,
        'chains': 1,
        'warm_n_iter': 500,
        'warm_burn': 100,
    },
    'optimizer': {
        'max_iters': 100,
        'grad_tol': 1e-6,
        'step_init': 1e-3,
        'armijo_c': 1e-4,
        'backtrack_factor': 0.5,
        'nonmonotone_window': 0,
        'rel_tol': 1e-10,
    },
    'priors': {
        'U0': 1.0,
        'nu0': 1.0,
        'U1': 1.0,
        'nu1': 1.0,
        'Lambda0': 1.0,
        'alpha': 2.0,
        'kappa': 1.0,
    },
    'covreg': {
        'tau_eta2': 100.0,
        'tau_B2': 100.0,
    },
    'simulate': {
        'n': 100,
        'p': 25,
        's': 4,
        'q': 4,
        'tau': 3.0,
        'sigma2': 1.0,
        'seed': 0,
    },
    'experiment': {
        'replicates': 20,
        'bootstrap_resamples': 1000,
    },
    'summarize': {
        'dims': '0,1',
        'top_m': 10,
    },
}

# --------------------------------------------------
# LOGGING
# --------------------------------------------------
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
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'envelope': {
            'handlers': ['console'],
            'level': os.environ.get('ENVELOPE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
