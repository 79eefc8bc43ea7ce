import json
from pathlib import Path

from django.core.management.base import CommandError

from scatterlab.exceptions import EXIT_USAGE

from .serializers import ExperimentConfigSerializer


def load_config(path) -> ExperimentConfigSerializer:
    """
    Read and validate a JSON experiment configuration.

    :raises CommandError: with the usage exit code when the file is unreadable or invalid.
    """
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CommandError(f'Cannot read config {path}: {exc}', returncode=EXIT_USAGE)
    serializer = ExperimentConfigSerializer(data=document)
    if not serializer.is_valid():
        raise CommandError(f'Invalid config {path}: {json.dumps(serializer.errors, sort_keys=True)}',
                           returncode=EXIT_USAGE)
    return serializer
