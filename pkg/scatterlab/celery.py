import os

import celery
from django.conf import settings

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'scatterlab.settings')

app = celery.Celery('scatterlab')

app.config_from_object('django.conf:settings', namespace='CELERY')
app.autodiscover_tasks(lambda: settings.INSTALLED_APPS)
app.conf.broker_connection_retry_on_startup = True
# experiments run for minutes; a worker holds one at a time
app.conf.worker_prefetch_multiplier = 1
app.conf.task_acks_late = True
app.conf.task_routes = {'experiments.tasks.*': {'queue': settings.SCATTERLAB_EXPERIMENT_QUEUE}}
