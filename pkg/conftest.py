import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'envreg_project.settings')
django.setup()
