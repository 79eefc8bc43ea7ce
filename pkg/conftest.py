import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'scatterlab.settings')
django.setup()
