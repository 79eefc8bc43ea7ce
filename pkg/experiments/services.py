import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import django
import numpy as np
import rest_framework
import scipy
from django.conf import settings
from rest_framework.exceptions import APIException, NotFound

from domain.catalog import build_form_factor, build_potential
from domain.catalog import describe as describe_catalog
from domain.grids import DirectionGrid, Grid3
from domain.services import HypothesisService
from domain.waves import WaveContext
from flux.services import (
    angular_scattered_density,
    cross_section as flux_cross_section,
    far_field_flux_profile,
    flux_convergence_in_distance,
    flux_field,
    incident_flux_magnitude,
)
from flux.surfaces import SurfacePatch
from oracle.services import bound_state_count, compare_amplitudes, partial_wave_amplitude, phase_shifts
from stationary.services import (
    LippmannSchwingerSolver,
    amplitude,
    convergence_study,
    optical_theorem_check,
    t_matrix,
)
from timedomain.services import (
    default_source_distance,
    discrete_limit_reference,
    evolve,
    extract_limit_amplitude,
    limit_amplitude_error,
    limit_amplitude_reference,
)

from .choices import experiment_kind_choices

logger = logging.getLogger(__name__)

FAILED_MARKER = 'FAILED'


@dataclass
class ExperimentReport:
    """
    Outcome of one experiment run.

    ``checks`` maps each named contract to its verdict; the run passes when all do.
    """
    kind: str
    config: dict
    results: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    failed_stage: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.failed_stage is None and all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'config': self.config,
            'results': self.results,
            'checks': self.checks,
            'passed': self.passed,
            'failed_stage': self.failed_stage,
            'artifacts': sorted(self.artifacts),
            'provenance': self.provenance,
        }


class ExperimentRunner:
    """
    Runs one validated experiment configuration and writes its artifacts.

    Every recipe fills ``results`` with plain numbers and ``checks`` with the
    verdicts the modules return; the runner adds no thresholds of its own.
    """

    def __init__(self, config: dict, output_dir=None, workers: Optional[int] = None):
        self.config = config
        self.output_dir = Path(output_dir or config['output_dir'])
        self.workers = workers or settings.SCATTERLAB_WORKERS
        self.report = ExperimentReport(kind=config['kind'], config=config)
        self.recipes = {
            'cross-section': self.cross_section,
            'convergence-D': self.convergence_in_distance,
            'limiting-amplitude': self.limiting_amplitude,
            'flux-check': self.flux_check,
            'oracle-compare': self.oracle_compare,
            'hypothesis-check': self.hypothesis_check,
        }

    def run(self) -> ExperimentReport:
        """
        Execute the configured recipe.

        :return: report, also written to ``report.json``.
        :raises Exception: any failure, after the FAILED marker and the partial report are flushed.
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / FAILED_MARKER).unlink(missing_ok=True)
        started = time.perf_counter()
        logger.info('Running %s experiment into %s', self.report.kind, self.output_dir)
        try:
            self.recipes[self.report.kind]()
        except APIException as exc:
            self._fail(getattr(exc, 'stage', self.report.kind), f'{type(exc).__name__}: {exc.detail}')
            raise
        except Exception as exc:
            logger.exception('Experiment %s crashed', self.report.kind)
            self._fail(self.report.kind, f'{type(exc).__name__}: {exc}')
            raise
        finally:
            elapsed = time.perf_counter() - started
            (self.output_dir / 'timing.txt').write_text(f'wall_seconds {elapsed:.3f}\n')
            logger.info('Experiment %s took %.1f s', self.report.kind, elapsed)
        self._write_report()
        return self.report

    # recipes

    def cross_section(self):
        solver = self._solver()
        solution = solver.plane(self.wave)
        table = amplitude(solution, self.dirs)
        self._artifact(table.to_csv(self.output_dir / 'amplitude.csv'))
        sigma = flux_cross_section(angular_scattered_density(table), incident_flux_magnitude(1.0, self.wave.k_abs),
                                   self.dirs)
        self._artifact(sigma.to_csv(self.output_dir / 'cross_section.csv'))
        optical = optical_theorem_check(solution, self.dirs)
        forward = table.wave.direction
        t_value = t_matrix(solution, forward)
        a_forward = amplitude(solution, DirectionGrid.single(forward)).amplitudes[0]
        identity_error = abs(a_forward + 4.0 * np.pi ** 2 * t_value.value)
        scale = max(abs(a_forward), np.finfo(float).tiny)
        self.report.results.update({
            'solver': solution.stats.to_dict(),
            'residual': solution.residual,
            'total_cross_section': table.total_cross_section(),
            'flux_total_cross_section': sigma.total(),
            'optical_theorem': optical.to_dict(),
            't_matrix_identity_error': float(identity_error),
        })
        self.report.checks['optical_theorem'] = optical.passed
        self.report.checks['t_matrix_identity'] = bool(identity_error <= settings.SCATTERLAB_IDENTITY_RTOL * scale)

    def convergence_in_distance(self):
        wave = self.config['wave']
        study = convergence_study(self.potential, self.form_factor, self.wave, wave['distances'], self.grid,
                                  self.dirs, sigma=self.config['solver']['sigma'], tol=self.config['solver']['tol'],
                                  workers=self.workers)
        self._artifact(study.to_json(self.output_dir / 'convergence.json'))
        self.report.results['convergence'] = study.to_dict()
        self.report.checks['convergence_in_distance'] = study.passed

    def limiting_amplitude(self):
        options = self.config['time']
        cells = self.config['grid']['evolution_cells']
        spacing = self.config['grid']['spacing']
        grid = Grid3.cube((0.0, 0.0, 0.0), 0.5 * cells * spacing, cells)
        distance = options['source_distance'] or default_source_distance(grid)
        wave = self.wave.with_distance(distance)
        period = 2.0 * np.pi / wave.energy
        crossing = float(np.max(grid.upper - grid.lower)) / wave.k_abs
        t_final = options['t_final'] or crossing + 2.0 * settings.SCATTERLAB_LIMIT_WINDOW_PERIODS * period

        bound_states = bound_state_count(self.potential)
        trajectory = evolve(self.potential, self.form_factor, wave, grid, t_final=t_final,
                            absorber_fraction=options['absorber_fraction'])
        estimate = extract_limit_amplitude(trajectory, sigma=self.config['solver']['sigma'])
        reference = limit_amplitude_reference(trajectory, self.potential, workers=self.workers)
        error = limit_amplitude_error(estimate, reference, mask=trajectory.physical_interior(),
                                      sigma=self.config['solver']['sigma'])
        discrete_error = limit_amplitude_error(estimate, discrete_limit_reference(trajectory),
                                               mask=trajectory.physical_interior(),
                                               sigma=self.config['solver']['sigma'])
        self._artifact(estimate.residuals_to_csv(self.output_dir / 'residuals.csv'))
        if options['export_snapshots']:
            self._artifact(trajectory.export(self.output_dir / 'trajectory'))
        self.report.results.update({
            'evolution_grid': grid.to_dict(),
            'source_distance': distance,
            't_final': t_final,
            'dt': trajectory.dt,
            'bound_states': bound_states,
            'limit_amplitude': estimate.to_dict(),
            'relative_error': error,
            'discrete_relative_error': discrete_error,
        })
        self.report.checks['no_bound_states'] = bound_states == 0
        self.report.checks['limit_amplitude_error'] = error <= settings.SCATTERLAB_LIMIT_AMPLITUDE_RTOL
        self.report.checks['discrete_limit_error'] = discrete_error <= settings.SCATTERLAB_LIMIT_AMPLITUDE_RTOL
        self.report.checks['residual_decreasing'] = estimate.decreasing

    def flux_check(self):
        solver = self._solver()
        solution = solver.plane(self.wave)
        options = self.config['flux']
        radii = self.potential.support_radius * np.asarray(options['radius_factors'])
        profile = far_field_flux_profile(solution, self.dirs, radii)
        field_path = flux_field(solution.field).save(self.output_dir / 'flux.bin')
        self._artifact(field_path)
        self._artifact(self._json('flux_profile.json', profile.to_dict()))
        self.report.results['far_field_flux'] = profile.to_dict()
        self.report.checks['far_field_flux'] = profile.passed

        distances = self.config['wave']['distances']
        if self.form_factor is not None and len(distances) >= 2:
            patch = SurfacePatch.disk(radius=options['disk_radius'], normal=self.wave.direction)
            convergence = flux_convergence_in_distance(solver, self.form_factor, self.wave, distances, patch)
            self._artifact(self._json('surface_flux.json', convergence.to_dict()))
            self.report.results['surface_flux'] = convergence.to_dict()
            self.report.checks['surface_flux_convergence'] = convergence.decreasing

    def oracle_compare(self):
        direction = self.wave.direction
        comparisons = {}
        for k_abs in self.config['k_values']:
            wave = WaveContext.along(k_abs, direction=direction, distance=self.wave.distance)
            shifts = phase_shifts(self.potential, k_abs, workers=self.workers)
            self._artifact(shifts.to_csv(self.output_dir / f'phase_shifts_k{k_abs:g}.csv'))
            oracle = partial_wave_amplitude(shifts, self.dirs, wave)
            nystrom = amplitude(self._solver(wave.energy).plane(wave), self.dirs)
            self._artifact(oracle.to_csv(self.output_dir / f'amplitude_oracle_k{k_abs:g}.csv'))
            self._artifact(nystrom.to_csv(self.output_dir / f'amplitude_nystrom_k{k_abs:g}.csv'))
            comparison = compare_amplitudes(oracle, nystrom)
            comparisons[f'{k_abs:g}'] = {**comparison.to_dict(), 'phase_shifts': shifts.to_dict()}
            self.report.checks[f'oracle_agreement_k{k_abs:g}'] = comparison.passed
        self.report.results['oracle'] = comparisons

    def hypothesis_check(self):
        service = HypothesisService()
        potential_report = service.validate_potential(self.potential)
        source_report = service.validate_form_factor(self.form_factor)
        wiener = service.wiener_check(self.form_factor, self.wave.k_abs, self.dirs)
        results = {
            'potential_envelope': potential_report.to_dict(),
            'source_envelope': source_report.to_dict(),
            'wiener_condition': wiener.to_dict(),
        }
        self._artifact(self._json('hypotheses.json', results))
        self.report.results.update(results)
        self.report.checks['potential_envelope'] = potential_report.passed
        self.report.checks['source_envelope'] = source_report.passed and not source_report.degenerate
        self.report.checks['wiener_condition'] = wiener.passed

    # building blocks

    @property
    def potential(self):
        if not hasattr(self, '_potential'):
            section = self.config['potential']
            self._potential = build_potential(section['name'], section['parameters'], support_tol=section['support_tol'])
        return self._potential

    @property
    def form_factor(self):
        section = self.config['source']
        if section is None:
            return None
        if not hasattr(self, '_form_factor'):
            self._form_factor = build_form_factor(section['name'], section['parameters'], resolution=section['resolution'])
        return self._form_factor

    @property
    def wave(self) -> WaveContext:
        return WaveContext(k=tuple(self.config['wave']['k']), distance=self.config['wave']['distance'])

    @property
    def grid(self) -> Grid3:
        return self.potential.grid(self.config['grid']['spacing'])

    @property
    def dirs(self) -> DirectionGrid:
        return DirectionGrid.from_config(self.config['directions'])

    def _solver(self, energy: Optional[float] = None) -> LippmannSchwingerSolver:
        solver = self.config['solver']
        return LippmannSchwingerSolver(self.potential, self.grid, energy or self.wave.energy, tol=solver['tol'],
                                       method=solver['method'], workers=self.workers)

    def _provenance(self) -> dict:
        return {
            'interaction_grid': self.grid.to_dict() if hasattr(self, '_potential') else None,
            'directions': len(self.dirs),
            'solver': self.config['solver'],
            'versions': {
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'django': django.get_version(),
                'djangorestframework': rest_framework.VERSION,
            },
        }

    def _json(self, name: str, payload: dict) -> Path:
        path = self.output_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return path

    def _artifact(self, path: Path):
        self.report.artifacts.append(str(Path(path).relative_to(self.output_dir)))

    def _fail(self, stage: str, error: str):
        logger.error('Experiment %s failed at stage %s: %s', self.report.kind, stage, error)
        self.report.failed_stage = stage
        (self.output_dir / FAILED_MARKER).write_text(f'stage: {stage}\nerror: {error}\n')
        self._write_report()

    def _write_report(self):
        self.report.provenance = self._provenance()
        self._json('report.json', self.report.to_dict())


def describe(filter_text: str = '') -> dict:
    """
    Catalog entries and experiment kinds whose names contain ``filter_text``.

    :raises NotFound: when neither matches.
    """
    try:
        entries = describe_catalog(filter_text)
    except NotFound:
        entries = []
    kinds = [{'name': name, 'description': description} for name, description in experiment_kind_choices
             if filter_text.lower() in name.lower()]
    if not entries and not kinds:
        raise NotFound(f'Nothing matches {filter_text!r}.')
    return {'catalog': entries, 'experiments': kinds}
