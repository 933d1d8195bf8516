import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "agcm_lab.settings")
django.setup()
