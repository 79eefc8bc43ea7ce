import csv
import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.core.management import call_command, load_command_class
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from rest_framework.exceptions import NotFound
from rest_framework.serializers import ValidationError

from scatterlab.exceptions import GeometryError

from .serializers import ExperimentConfigSerializer
from .services import FAILED_MARKER, ExperimentRunner, describe
from .tasks import run_experiment_task


def zero_cross_section_config(output_dir) -> dict:
    return {
        'kind': 'cross-section',
        'potential': {'name': 'zero_potential'},
        'wave': {'k': [0.0, 0.0, 1.0]},
        'directions': {'points': 26},
        'output_dir': str(output_dir),
    }


def validated(config: dict) -> dict:
    serializer = ExperimentConfigSerializer(data=config)
    serializer.is_valid(raise_exception=True)
    return serializer.echo


class ConfigTests(SimpleTestCase):
    def test_defaults_are_echoed(self) -> None:
        """test missing sections and parameters get their defaults"""
        config = validated({
            'kind': 'cross-section',
            'potential': {'name': 'gaussian_well', 'parameters': {'g': -2.0}},
            'wave': {'k': [1.0, 0.0, 0.0]},
        })
        self.assertEqual(config['potential']['parameters'], {'g': -2.0, 'width': 1.0})
        self.assertEqual(config['grid']['spacing'], 0.4)
        self.assertEqual(config['solver']['method'], 'auto')
        self.assertEqual(config['directions']['points'], 110)
        self.assertEqual(config['wave']['distance'], 100.0)
        self.assertIsNone(config['source'])

    def test_parameter_out_of_range(self) -> None:
        """test catalog range violation"""
        serializer = ExperimentConfigSerializer(data={
            'kind': 'cross-section',
            'potential': {'name': 'gaussian_well', 'parameters': {'g': -50.0}},
            'wave': {'k': [1.0, 0.0, 0.0]},
        })
        self.assertFalse(serializer.is_valid())
        self.assertIn('potential', serializer.errors)

    def test_unknown_catalog_name(self) -> None:
        """test potential outside the catalog"""
        serializer = ExperimentConfigSerializer(data={
            'kind': 'cross-section', 'potential': {'name': 'coulomb'}, 'wave': {'k': [1.0, 0.0, 0.0]},
        })
        self.assertFalse(serializer.is_valid())

    def test_kind_requirements(self) -> None:
        """test convergence-D needs a source and several distances"""
        base = {'kind': 'convergence-D', 'potential': {'name': 'zero_potential'},
                'wave': {'k': [1.0, 0.0, 0.0], 'distances': [50.0, 100.0]}}
        self.assertFalse(ExperimentConfigSerializer(data=base).is_valid())
        with_source = {**base, 'source': {'name': 'point_source'}, 'wave': {'k': [1.0, 0.0, 0.0]}}
        self.assertFalse(ExperimentConfigSerializer(data=with_source).is_valid())

    def test_zero_wave_vector(self) -> None:
        """test k = 0"""
        serializer = ExperimentConfigSerializer(data={
            'kind': 'cross-section', 'potential': {'name': 'zero_potential'}, 'wave': {'k': [0.0, 0.0, 0.0]},
        })
        self.assertFalse(serializer.is_valid())

    def test_yukawa_core_combination(self) -> None:
        """test core beyond 1/mu is rejected although each value is in range"""
        serializer = ExperimentConfigSerializer(data={
            'kind': 'cross-section',
            'potential': {'name': 'yukawa_regularized', 'parameters': {'mu': 1.0, 'core': 1.5}},
            'wave': {'k': [1.0, 0.0, 0.0]},
        })
        self.assertFalse(serializer.is_valid())
        self.assertIn('potential', serializer.errors)


class DescribeTests(SimpleTestCase):
    def test_full_listing(self) -> None:
        """test empty filter lists everything, sorted"""
        listing = describe()
        names = [entry['name'] for entry in listing['catalog']]
        self.assertEqual(names, sorted(names))
        self.assertEqual(len(names), 8)
        self.assertEqual(len(listing['experiments']), 6)

    def test_gaussian_filter(self) -> None:
        """test filter matching the well and the source"""
        listing = describe('gaussian')
        self.assertEqual([entry['name'] for entry in listing['catalog']], ['gaussian_source', 'gaussian_well'])
        self.assertEqual(listing['experiments'], [])

    def test_unknown_name(self) -> None:
        """test filter matching nothing"""
        with self.assertRaises(NotFound):
            describe('coulomb')
        with self.assertRaises(CommandError) as context:
            call_command('describe', 'coulomb', stdout=StringIO())
        self.assertEqual(context.exception.returncode, 2)


class RunnerTests(SimpleTestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.out = Path(self.directory.name)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def test_zero_cross_section(self) -> None:
        """test V = 0 gives a table of zeros and passes"""
        report = ExperimentRunner(validated(zero_cross_section_config(self.out))).run()
        self.assertTrue(report.passed)
        self.assertEqual(set(report.checks), {'optical_theorem', 't_matrix_identity'})
        with (self.out / 'amplitude.csv').open() as stream:
            rows = list(csv.DictReader(stream))
        self.assertEqual(len(rows), 26)
        self.assertTrue(all(float(row['sigma']) == 0.0 for row in rows))
        with (self.out / 'cross_section.csv').open() as stream:
            rows = list(csv.DictReader(stream))
        self.assertEqual(list(rows[0]), ['theta_x', 'theta_y', 'theta_z', 'sigma'])
        self.assertEqual(len(rows), 26)
        self.assertEqual(report.results['flux_total_cross_section'], 0.0)
        saved = json.loads((self.out / 'report.json').read_text())
        self.assertTrue(saved['passed'])
        self.assertEqual(saved['config']['directions']['points'], 26)
        self.assertTrue((self.out / 'timing.txt').exists())
        self.assertFalse((self.out / FAILED_MARKER).exists())

    def test_failure_leaves_marker(self) -> None:
        """test source inside the interaction grid"""
        config = validated({
            'kind': 'convergence-D',
            'potential': {'name': 'zero_potential'},
            'source': {'name': 'point_source'},
            'wave': {'k': [0.0, 0.0, 1.0], 'distances': [0.5, 1.0]},
            'directions': {'points': 6},
            'output_dir': str(self.out),
        })
        with self.assertRaises(GeometryError):
            ExperimentRunner(config).run()
        self.assertIn('solve_spherical', (self.out / FAILED_MARKER).read_text())
        saved = json.loads((self.out / 'report.json').read_text())
        self.assertFalse(saved['passed'])
        self.assertEqual(saved['failed_stage'], 'solve_spherical')

    def test_catalog_failure_leaves_marker(self) -> None:
        """test errors raised while building the potential are reported"""
        config = validated({
            'kind': 'cross-section',
            'potential': {'name': 'yukawa_regularized'},
            'wave': {'k': [0.0, 0.0, 1.0]},
            'directions': {'points': 6},
            'output_dir': str(self.out),
        })
        config['potential']['parameters']['core'] = 1.5
        with self.assertRaises(ValidationError):
            ExperimentRunner(config).run()
        self.assertIn('ValidationError', (self.out / FAILED_MARKER).read_text())
        saved = json.loads((self.out / 'report.json').read_text())
        self.assertEqual(saved['failed_stage'], 'cross-section')
        self.assertIsNone(saved['provenance']['interaction_grid'])

    def test_workers_reach_every_stage(self) -> None:
        """test the thread pool size is handed to the study and the limit reference"""
        config = {
            'kind': 'convergence-D',
            'potential': {'name': 'zero_potential'},
            'source': {'name': 'point_source'},
            'wave': {'k': [0.0, 0.0, 1.0], 'distances': [0.5, 1.0]},
            'directions': {'points': 6},
            'output_dir': str(self.out / 'study'),
        }
        with patch('experiments.services.convergence_study', side_effect=np.linalg.LinAlgError('stop')) as study:
            with self.assertRaises(np.linalg.LinAlgError):
                ExperimentRunner(validated(config), workers=3).run()
        self.assertEqual(study.call_args.kwargs['workers'], 3)

        config = validated({**config, 'kind': 'limiting-amplitude', 'output_dir': str(self.out / 'limit')})
        with patch('experiments.services.evolve'), patch('experiments.services.extract_limit_amplitude'), \
                patch('experiments.services.limit_amplitude_reference',
                      side_effect=np.linalg.LinAlgError('stop')) as reference:
            with self.assertRaises(np.linalg.LinAlgError):
                ExperimentRunner(config, workers=3).run()
        self.assertEqual(reference.call_args.kwargs['workers'], 3)

    def test_oracle_compare_is_reproducible(self) -> None:
        """test rerunning a config reproduces its CSV artifacts byte for byte"""
        config = {
            'kind': 'oracle-compare',
            'potential': {'name': 'gaussian_well', 'parameters': {'g': -1.0}, 'support_tol': 1e-6},
            'wave': {'k': [0.0, 0.0, 1.0]},
            'directions': {'points': 14},
            'k_values': [1.0],
        }
        first, second = self.out / 'first', self.out / 'second'
        ExperimentRunner(validated({**config, 'output_dir': str(first)})).run()
        report = ExperimentRunner(validated({**config, 'output_dir': str(second)})).run()
        self.assertIn('oracle_agreement_k1', report.checks)
        for name in ('phase_shifts_k1.csv', 'amplitude_oracle_k1.csv', 'amplitude_nystrom_k1.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_hypothesis_check(self) -> None:
        """test Gaussian well and Gaussian source satisfy the hypotheses"""
        report = ExperimentRunner(validated({
            'kind': 'hypothesis-check',
            'potential': {'name': 'gaussian_well'},
            'source': {'name': 'gaussian_source'},
            'wave': {'k': [0.0, 0.0, 1.0]},
            'directions': {'points': 26},
            'output_dir': str(self.out),
        })).run()
        self.assertTrue(report.passed, report.checks)
        self.assertTrue((self.out / 'hypotheses.json').exists())


class CommandTests(SimpleTestCase):
    def setUp(self) -> None:
        self.directory = tempfile.TemporaryDirectory()
        self.out = Path(self.directory.name)

    def tearDown(self) -> None:
        self.directory.cleanup()

    def write_config(self, config: dict) -> str:
        path = self.out / 'config.json'
        path.write_text(json.dumps(config))
        return str(path)

    def test_run_passes(self) -> None:
        """test run command on a passing configuration"""
        stdout = StringIO()
        path = self.write_config(zero_cross_section_config(self.out / 'ignored'))
        call_command('run', '--config', path, '--out', str(self.out / 'run'), '--workers', '1', '--seed', '7',
                     stdout=stdout)
        self.assertTrue(json.loads(stdout.getvalue())['passed'])
        self.assertEqual(json.loads((self.out / 'run' / 'report.json').read_text())['config']['seed'], 7)
        self.assertFalse((self.out / 'ignored').exists())

    def test_invalid_config(self) -> None:
        """test usage exit code"""
        path = self.write_config({'kind': 'cross-section'})
        with self.assertRaises(CommandError) as context:
            call_command('run', '--config', path, stdout=StringIO())
        self.assertEqual(context.exception.returncode, 2)

    def test_numeric_failure(self) -> None:
        """test numeric exit code"""
        path = self.write_config({
            'kind': 'convergence-D',
            'potential': {'name': 'zero_potential'},
            'source': {'name': 'point_source'},
            'wave': {'k': [0.0, 0.0, 1.0], 'distances': [0.5, 1.0]},
            'directions': {'points': 6},
            'output_dir': str(self.out / 'failed'),
        })
        with self.assertRaises(CommandError) as context:
            call_command('run', '--config', path, stdout=StringIO())
        self.assertEqual(context.exception.returncode, 3)
        self.assertTrue((self.out / 'failed' / FAILED_MARKER).exists())

    def test_library_failure(self) -> None:
        """test exceptions from numeric libraries exit with the numeric code"""
        path = self.write_config(zero_cross_section_config(self.out / 'crashed'))
        with patch.object(ExperimentRunner, 'cross_section', side_effect=np.linalg.LinAlgError('Singular matrix')):
            with self.assertRaises(CommandError) as context:
                call_command('run', '--config', path, stdout=StringIO())
        self.assertEqual(context.exception.returncode, 3)
        self.assertIn('LinAlgError', (self.out / 'crashed' / FAILED_MARKER).read_text())

    def test_validate_config(self) -> None:
        """test validate_config prints the completed configuration"""
        stdout = StringIO()
        call_command('validate_config', '--config', self.write_config(zero_cross_section_config(self.out)),
                     stdout=stdout)
        self.assertEqual(json.loads(stdout.getvalue())['solver']['method'], 'auto')

    def test_validate_config_help(self) -> None:
        """test the help maps validate-config onto the Django command name"""
        command = load_command_class('experiments', 'validate_config')
        self.assertIn('validate-config', command.help)

    def test_task_runs_inline(self) -> None:
        """test the Celery task body"""
        result = run_experiment_task(zero_cross_section_config(self.out), str(self.out / 'task'))
        self.assertTrue(result['passed'])
        self.assertTrue((self.out / 'task' / 'report.json').exists())
