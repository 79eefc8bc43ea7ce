import json
import logging

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import APIException

from scatterlab.exceptions import EXIT_CONTRACT_FAIL, exit_code_for

from ...services import ExperimentRunner
from ...tasks import run_experiment_task
from ...utils import load_config

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run one experiment from a JSON configuration and write its report and artifacts.'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Path to the experiment configuration (JSON).')
        parser.add_argument('--out', default=None, help='Output directory, overrides the configuration.')
        parser.add_argument('--workers', type=int, default=None, help='Upper bound on worker threads.')
        parser.add_argument('--seed', type=int, default=None, help='Recorded in the report; no numeric effect.')
        parser.add_argument('--queue', action='store_true', help='Dispatch to a Celery worker instead.')

    def handle(self, *args, **options):
        serializer = load_config(options['config'])
        config = serializer.echo
        if options['seed'] is not None:
            config['seed'] = options['seed']

        if options['queue']:
            result = run_experiment_task.delay(config, options['out'])
            self.stdout.write(f'Queued {config["kind"]} experiment as task {result.id}')
            return

        try:
            report = ExperimentRunner(config, output_dir=options['out'], workers=options['workers']).run()
        except APIException as exc:
            raise CommandError(f'{type(exc).__name__}: {exc.detail}', returncode=exit_code_for(exc))
        except Exception as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=exit_code_for(exc))

        self.stdout.write(json.dumps({'kind': report.kind, 'checks': report.checks, 'passed': report.passed},
                                     sort_keys=True))
        if not report.passed:
            failed = sorted(name for name, verdict in report.checks.items() if not verdict)
            raise CommandError(f'Contract failed: {", ".join(failed)}', returncode=EXIT_CONTRACT_FAIL)
