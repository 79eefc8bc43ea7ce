import json

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import NotFound

from scatterlab.exceptions import EXIT_USAGE

from ...services import describe


class Command(BaseCommand):
    help = 'List built-in potentials, sources and experiment kinds with their parameter ranges.'

    def add_arguments(self, parser):
        parser.add_argument('filter', nargs='?', default='', help='Substring of the entry name.')

    def handle(self, *args, **options):
        try:
            listing = describe(options['filter'])
        except NotFound as exc:
            raise CommandError(str(exc.detail), returncode=EXIT_USAGE)
        self.stdout.write(json.dumps(listing, indent=2, sort_keys=True))
