import logging

from celery import shared_task

from .serializers import ExperimentConfigSerializer
from .services import ExperimentRunner

logger = logging.getLogger(__name__)


@shared_task
def run_experiment_task(config: dict, output_dir: str = None) -> dict:
    """
    Run one experiment in a worker.

    :param config: experiment configuration document.
    :param output_dir: artifact directory, overriding the one in ``config``.
    :return: serialized report.
    """
    serializer = ExperimentConfigSerializer(data=config)
    serializer.is_valid(raise_exception=True)
    logger.info('Start %s experiment task.', serializer.validated_data['kind'])
    report = ExperimentRunner(serializer.echo, output_dir=output_dir).run()
    return report.to_dict()
