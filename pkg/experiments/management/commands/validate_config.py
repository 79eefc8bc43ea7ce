import json

from django.core.management.base import BaseCommand

from ...utils import load_config


class Command(BaseCommand):
    help = ('Validate an experiment configuration and print it with every default filled in. '
            'This is the validate-config subcommand; Django command names use underscores.')

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Path to the experiment configuration (JSON).')

    def handle(self, *args, **options):
        serializer = load_config(options['config'])
        self.stdout.write(json.dumps(serializer.echo, indent=2, sort_keys=True))
