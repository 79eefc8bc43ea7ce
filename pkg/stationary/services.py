import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings
from rest_framework.serializers import ValidationError
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres

from domain.catalog import FormFactor, Potential
from domain.grids import DirectionGrid, Grid3, ScalarField
from domain.services import fourier_sum, source_transform
from domain.waves import WaveContext
from resolvent.services import FreeResolvent
from resolvent.utils import diagonal_correction
from scatterlab.exceptions import DegenerateSourceError, DomainError, GeometryError, IterationLimitError

logger = logging.getLogger(__name__)

PLANE = 'plane'
SPHERICAL = 'spherical'
SAMPLED = 'sampled'


@dataclass(frozen=True)
class IncidentWave:
    """
    Plane wave e^{ik.x}, or the spherical wave radiated by ``form_factor`` placed at q_D.

    A sampled incident carries its values on the solver grid only.
    """
    kind: str
    wave: WaveContext
    form_factor: Optional[FormFactor] = None
    samples: Optional[np.ndarray] = None

    @classmethod
    def plane(cls, wave: WaveContext) -> 'IncidentWave':
        return cls(kind=PLANE, wave=wave)

    @classmethod
    def spherical(cls, form_factor: FormFactor, wave: WaveContext) -> 'IncidentWave':
        return cls(kind=SPHERICAL, wave=wave, form_factor=form_factor)

    @classmethod
    def sampled(cls, wave: WaveContext, samples) -> 'IncidentWave':
        return cls(kind=SAMPLED, wave=wave, samples=np.asarray(samples, dtype=complex).ravel())

    def values(self, resolvent: FreeResolvent, points) -> np.ndarray:
        if self.kind == PLANE:
            return self.wave.plane_wave(points)
        if self.kind == SAMPLED:
            if np.atleast_2d(points).shape[0] != self.samples.size:
                raise ValidationError('A sampled incident wave is only known on its own grid.')
            return self.samples.copy()
        return resolvent.incident_spherical(self.form_factor, self.wave, points)

    def to_dict(self) -> dict:
        description = {'kind': self.kind, **self.wave.to_dict()}
        if self.form_factor is not None:
            description['source'] = self.form_factor.to_dict()
            description['source_position'] = [float(value) for value in self.wave.source_position]
        return description


@dataclass(frozen=True)
class SolverStats:
    method: str
    unknowns: int
    iterations: int = 0
    condition_estimate: Optional[float] = None
    spectral_radius: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            'method': self.method,
            'unknowns': self.unknowns,
            'iterations': self.iterations,
            'condition_estimate': self.condition_estimate,
            'spectral_radius': self.spectral_radius,
        }


@dataclass(frozen=True)
class LSSolution:
    """Solution of a Lippmann-Schwinger equation on the interaction grid."""
    field: ScalarField
    incident: IncidentWave
    residual: float
    stats: SolverStats
    potential_values: np.ndarray
    active: np.ndarray

    @property
    def grid(self) -> Grid3:
        return self.field.grid

    def scattering_density(self) -> np.ndarray:
        """V * A on the grid cells, flattened."""
        return self.potential_values * self.field.flat


@dataclass(frozen=True)
class AmplitudeTable:
    """Scattering amplitude a(k, theta) on a direction grid; sigma = |a|^2."""
    dirs: DirectionGrid
    amplitudes: np.ndarray
    wave: WaveContext

    @property
    def cross_section(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def total_cross_section(self) -> float:
        return float(np.real(self.dirs.integrate(self.cross_section)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open('w', newline='') as stream:
            writer = csv.writer(stream)
            writer.writerow(['theta_x', 'theta_y', 'theta_z', 're_a', 'im_a', 'sigma'])
            for direction, amplitude, sigma in zip(self.dirs.points, self.amplitudes, self.cross_section):
                writer.writerow([_number(value) for value in (*direction, amplitude.real, amplitude.imag, sigma)])
        return path


@dataclass(frozen=True)
class TMatrixValue:
    k_out: np.ndarray
    k_in: np.ndarray
    value: complex

    def __post_init__(self):
        if abs(np.linalg.norm(self.k_out) - np.linalg.norm(self.k_in)) > 1e-12 * max(np.linalg.norm(self.k_in), 1):
            raise ValidationError('T-matrix values are on shell: |k_out| must equal |k_in|.')

    @property
    def cross_section(self) -> float:
        return float(16.0 * np.pi ** 4 * abs(self.value) ** 2)


@dataclass
class OpticalTheoremReport:
    forward_imaginary: float
    sphere_term: float
    deviation: float
    rtol: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            'forward_imaginary': self.forward_imaginary,
            'sphere_term': self.sphere_term,
            'deviation': self.deviation,
            'rtol': self.rtol,
            'passed': self.passed,
        }


@dataclass
class ConvergenceReport:
    distances: list
    err_incident: list
    err_field: list
    err_amp: list
    predicted_incident: list
    slopes: dict
    monotone: dict
    sigma: float
    slope_target: float
    passed: bool = False
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'D': self.distances,
            'err_incident': self.err_incident,
            'err_field': self.err_field,
            'err_amp': self.err_amp,
            'predicted_incident': self.predicted_incident,
            'slopes': self.slopes,
            'monotone': self.monotone,
            'sigma': self.sigma,
            'slope_target': self.slope_target,
            'passed': self.passed,
            'messages': self.messages,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _number(value: float) -> str:
    return format(float(value), '.17g')


class LippmannSchwingerSolver:
    """
    Nystrom discretization of A + R0(V A) = incident on the cells where V is non-negligible.

    One solver serves any number of incident waves at the same energy; the dense
    system is assembled and factorized once.
    """

    def __init__(self, potential: Potential, grid: Grid3, energy: float, tol: Optional[float] = None,
                 method: str = 'auto', workers: Optional[int] = None):
        lower, upper = potential.support_box
        if np.any(grid.lower > lower + 1e-9) or np.any(grid.upper < upper - 1e-9):
            raise DomainError(detail=f'Grid box {grid.lower}..{grid.upper} does not cover the support of '
                                     f'{potential.name} (radius {potential.support_radius:.3f}).', stage='solve')
        self.potential = potential
        self.grid = grid
        self.energy = float(energy)
        self.tol = tol or settings.SCATTERLAB_SOLVER_TOL
        self.resolvent = FreeResolvent(energy, workers=workers)

        self.points = grid.points()
        self.potential_values = potential(self.points)
        peak = float(np.max(np.abs(self.potential_values)))
        self.active = np.abs(self.potential_values) > settings.SCATTERLAB_SUPPORT_TOL * peak if peak > 0 \
            else np.zeros(grid.size, dtype=bool)
        self.active_points = self.points[self.active]
        self.active_potential = self.potential_values[self.active]
        self.method = self._choose_method(method)

        self._system = None
        self._lu = None
        self.condition_estimate = None
        self.spectral_radius = None

    @property
    def unknowns(self) -> int:
        return int(self.active.sum())

    def plane(self, wave: WaveContext) -> LSSolution:
        """Solve with the plane incident wave e^{ik.x}."""
        return self.solve(IncidentWave.plane(wave))

    def spherical(self, form_factor: FormFactor, wave: WaveContext) -> LSSolution:
        """
        Solve with the spherical incident wave of ``form_factor`` placed at q_D.

        :raises GeometryError: when the shifted source support reaches the grid box.
        """
        center = wave.source_position
        nearest = np.clip(center, self.grid.lower, self.grid.upper)
        if np.linalg.norm(center - nearest) <= form_factor.support_radius:
            raise GeometryError(detail=f'Source at distance {wave.distance} overlaps the interaction grid.',
                                stage='solve_spherical')
        return self.solve(IncidentWave.spherical(form_factor, wave))

    def solve(self, incident: IncidentWave) -> LSSolution:
        """
        Solve the discrete system and extend the solution to every grid cell.

        :param incident: incident wave at the solver energy.
        :return: solution with relative residual below the solver tolerance.
        """
        if abs(incident.wave.energy - self.energy) > 1e-12 * self.energy:
            raise ValidationError(f'Incident energy {incident.wave.energy} differs from solver energy {self.energy}.')

        incident_values = incident.values(self.resolvent, self.points)
        if self.unknowns == 0:
            stats = SolverStats(method='identity', unknowns=0)
            return self._solution(incident, incident_values, 0.0, stats)

        rhs = incident_values[self.active]
        if not np.any(rhs):
            stats = SolverStats(method=self.method, unknowns=self.unknowns)
            return self._solution(incident, incident_values, 0.0, stats)

        logger.info('Solving %s Lippmann-Schwinger system with %d unknowns by %s', incident.kind, self.unknowns,
                    self.method)
        if self.method == 'direct':
            values, iterations = self._solve_direct(rhs), 1
        elif self.method == 'born':
            values, iterations = self._solve_born(rhs)
        else:
            values, iterations = self._solve_krylov(rhs)

        residual = float(np.linalg.norm(self.apply_system(values) - rhs) / np.linalg.norm(rhs))
        if residual > self.tol:
            raise IterationLimitError(detail=f'{self.method} solve ended with relative residual {residual:.3e} '
                                             f'above {self.tol:.1e}.', stage='solve')

        field_values = incident_values.copy()
        field_values[self.active] = values
        inactive = ~self.active
        if inactive.any():
            field_values[inactive] -= self.resolvent.apply_values(
                self.points[inactive], self.active_points, self.active_potential * values, self.grid.spacing)

        stats = SolverStats(method=self.method, unknowns=self.unknowns, iterations=iterations,
                            condition_estimate=self.condition_estimate, spectral_radius=self.spectral_radius)
        logger.info('Solved in %d iterations, relative residual %.2e', iterations, residual)
        return self._solution(incident, field_values, residual, stats)

    def apply_system(self, values) -> np.ndarray:
        """(I + K V) applied to values on the active cells."""
        if self.unknowns <= settings.SCATTERLAB_DIRECT_SOLVE_MAX_UNKNOWNS:
            return self._dense_system() @ values
        return values + self.resolvent.apply_values(self.active_points, self.active_points,
                                                    self.active_potential * values, self.grid.spacing)

    def estimate_spectral_radius(self, iterations: int = 40) -> float:
        """Power-iteration estimate of the spectral radius of K V."""
        vector = np.ones(self.unknowns, dtype=complex) / np.sqrt(max(self.unknowns, 1))
        estimate = 0.0
        for _ in range(iterations):
            image = self.apply_system(vector) - vector
            estimate = float(np.linalg.norm(image))
            if estimate == 0:
                break
            vector = image / estimate
        self.spectral_radius = estimate
        return estimate

    def _choose_method(self, method: str) -> str:
        if method not in ('auto', 'direct', 'krylov', 'born'):
            raise ValidationError(f'Unknown solver method {method!r}.')
        if method != 'auto':
            return method
        if self.unknowns <= settings.SCATTERLAB_DIRECT_SOLVE_MAX_UNKNOWNS:
            return 'direct'
        return 'krylov'

    def _dense_system(self) -> np.ndarray:
        if self._system is None:
            kernel = self.resolvent.assemble(self.active_points, self.active_points, self.grid.spacing,
                                             self.grid.dims)
            system = kernel.entries * self.active_potential[None, :]
            system[np.diag_indices_from(system)] += 1.0
            self._system = system
        return self._system

    def _solve_direct(self, rhs) -> np.ndarray:
        if self._lu is None:
            if self.unknowns > settings.SCATTERLAB_DIRECT_SOLVE_MAX_UNKNOWNS:
                logger.warning('Direct solve requested for %d unknowns; assembling the dense system anyway.',
                               self.unknowns)
            system = self._dense_system()
            self._lu = lu_factor(system)
            anorm = np.linalg.norm(system, 1)
            rcond, _ = lapack.zgecon(self._lu[0], anorm, norm='1')
            self.condition_estimate = float(1.0 / rcond) if rcond > 0 else float('inf')
            if self.condition_estimate > settings.SCATTERLAB_CONDITION_WARNING:
                logger.warning('Lippmann-Schwinger system is nearly singular: condition estimate %.3e',
                               self.condition_estimate)
        return lu_solve(self._lu, rhs)

    def _solve_krylov(self, rhs):
        operator = LinearOperator((self.unknowns, self.unknowns), matvec=self.apply_system, dtype=complex)
        self_cell = diagonal_correction(self.energy, self.grid.spacing)
        inverse_diagonal = 1.0 / (1.0 + self_cell * self.active_potential)
        preconditioner = LinearOperator((self.unknowns, self.unknowns), matvec=lambda v: inverse_diagonal * v,
                                        dtype=complex)
        counter = {'iterations': 0}

        def count(_):
            counter['iterations'] += 1

        values, info = gmres(operator, rhs, rtol=0.1 * self.tol, atol=0.0, restart=settings.SCATTERLAB_KRYLOV_RESTART,
                             maxiter=settings.SCATTERLAB_KRYLOV_MAXITER, M=preconditioner, callback=count,
                             callback_type='pr_norm')
        if info > 0:
            logger.warning('GMRES stopped after %d iterations without reaching the tolerance.', counter['iterations'])
        elif info < 0:
            raise IterationLimitError(detail=f'GMRES failed with code {info}.', stage='solve')
        return values, counter['iterations']

    def _solve_born(self, rhs):
        radius = self.spectral_radius if self.spectral_radius is not None else self.estimate_spectral_radius()
        if radius >= settings.SCATTERLAB_BORN_MAX_RADIUS:
            logger.warning('Born series rejected: spectral radius %.3f; using GMRES.', radius)
            return self._solve_krylov(rhs)
        values = rhs.copy()
        norm = np.linalg.norm(rhs)
        for iteration in range(1, settings.SCATTERLAB_BORN_MAXITER + 1):
            values = rhs - (self.apply_system(values) - values)
            if np.linalg.norm(self.apply_system(values) - rhs) <= 0.1 * self.tol * norm:
                return values, iteration
        raise IterationLimitError(detail='Born series did not reach the tolerance.', stage='solve')

    def _solution(self, incident, values, residual, stats) -> LSSolution:
        return LSSolution(field=ScalarField(grid=self.grid, values=values), incident=incident, residual=residual,
                          stats=stats, potential_values=self.potential_values, active=self.active)


def solve_plane(potential: Potential, wave: WaveContext, grid: Grid3, tol: Optional[float] = None,
                method: str = 'auto') -> LSSolution:
    return LippmannSchwingerSolver(potential, grid, wave.energy, tol=tol, method=method).plane(wave)


def solve_spherical(potential: Potential, form_factor: FormFactor, wave: WaveContext, grid: Grid3,
                    tol: Optional[float] = None, method: str = 'auto') -> LSSolution:
    return LippmannSchwingerSolver(potential, grid, wave.energy, tol=tol, method=method).spherical(form_factor, wave)


def evaluate_field(solution: LSSolution, points) -> np.ndarray:
    """
    A(x) = incident(x) - R0(V A)(x) at arbitrary points.

    :param solution: Lippmann-Schwinger solution.
    :param points: ``(M, 3)`` evaluation points.
    :return: complex values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    resolvent = FreeResolvent(solution.incident.wave.energy)
    incident = solution.incident.values(resolvent, points)
    return incident - resolvent.apply_values(points, solution.grid.points(), solution.scattering_density(),
                                             solution.grid.spacing)


def source_far_field(form_factor: FormFactor, wave: WaveContext, directions) -> np.ndarray:
    """b(theta) = (1/2 pi) int e^{-i|k| theta.y} rho(y) dy."""
    return source_transform(form_factor, -wave.k_abs * np.atleast_2d(directions)) / (2.0 * np.pi)


def normalization_bD(form_factor: FormFactor, wave: WaveContext, tol: Optional[float] = None) -> complex:
    """
    b_D(n) = b(n) e^{i|k|D} for the incident direction n.

    :raises DegenerateSourceError: when |b(n)| does not exceed the Wiener tolerance.
    """
    tol = settings.SCATTERLAB_WIENER_TOL if tol is None else tol
    b_n = complex(source_far_field(form_factor, wave, wave.direction)[0])
    if abs(b_n) <= tol:
        raise DegenerateSourceError(detail=f'|b(n)| = {abs(b_n):.3e} for {form_factor.name} at |k|={wave.k_abs}.')
    return b_n * np.exp(1j * wave.k_abs * wave.distance)


def normalized_AD(solution: LSSolution, b_D: complex) -> ScalarField:
    """A_D = B_D / b_D."""
    if b_D == 0:
        raise DegenerateSourceError(detail='Cannot normalize by b_D = 0.')
    return solution.field.scaled(1.0 / b_D)


def amplitude(solution: LSSolution, dirs: DirectionGrid) -> AmplitudeTable:
    """
    a(k, theta) = -(1/2 pi) int e^{-i|k| theta.y} V(y) A(y) dy on the solution grid.

    Spherical solutions are normalized by b_D first, giving a_D(k, theta).
    """
    wave = solution.incident.wave
    density = solution.scattering_density()
    if solution.incident.kind == SPHERICAL:
        density = density / normalization_bD(solution.incident.form_factor, wave)
    sums = fourier_sum(solution.grid.points(), density * solution.grid.cell_volume, -wave.k_abs * dirs.points)
    return AmplitudeTable(dirs=dirs, amplitudes=-sums / (2.0 * np.pi), wave=wave)


def t_matrix(solution: LSSolution, direction) -> TMatrixValue:
    """T(|k| theta, k) = (2 pi)^-3 int e^{-i|k| theta.y} V(y) A(y) dy."""
    wave = solution.incident.wave
    direction = np.asarray(direction, dtype=float)
    k_out = wave.k_abs * direction / np.linalg.norm(direction)
    value = fourier_sum(solution.grid.points(), solution.scattering_density() * solution.grid.cell_volume,
                        -k_out)[0] / (2.0 * np.pi) ** 3
    return TMatrixValue(k_out=k_out, k_in=wave.k_vector, value=complex(value))


def optical_theorem_check(solution: LSSolution, dirs: Optional[DirectionGrid] = None,
                          rtol: Optional[float] = None) -> OpticalTheoremReport:
    """
    Compare Im a(k, n) with (|k| / 4 pi) times the sphere integral of sigma.

    :param solution: plane-wave solution.
    :param dirs: sphere quadrature for the total cross section.
    :param rtol: tolerance relative to the sphere term.
    :return: report.
    """
    dirs = dirs or DirectionGrid.default()
    rtol = settings.SCATTERLAB_OPTICAL_THEOREM_RTOL if rtol is None else rtol
    wave = solution.incident.wave
    forward = amplitude(solution, DirectionGrid.single(wave.direction)).amplitudes[0]
    sphere_term = wave.k_abs / (4.0 * np.pi) * amplitude(solution, dirs).total_cross_section()
    deviation = abs(forward.imag - sphere_term)
    passed = deviation <= rtol * sphere_term
    if not passed:
        logger.warning('Optical theorem deviation %.3e exceeds %.1f%% of %.3e', deviation, 100 * rtol, sphere_term)
    return OpticalTheoremReport(forward_imaginary=float(forward.imag), sphere_term=float(sphere_term),
                                deviation=float(deviation), rtol=rtol, passed=bool(passed))


def born_amplitude(potential: Potential, wave: WaveContext, grid: Grid3, dirs: DirectionGrid) -> AmplitudeTable:
    """First Born term -(1/2 pi) int e^{-i|k| theta.y} V(y) e^{ik.y} dy on the same quadrature."""
    points = grid.points()
    weights = potential(points) * wave.plane_wave(points) * grid.cell_volume
    sums = fourier_sum(points, weights, -wave.k_abs * dirs.points)
    return AmplitudeTable(dirs=dirs, amplitudes=-sums / (2.0 * np.pi), wave=wave)


def yukawa_born_amplitude(g: float, mu: float, momentum_transfer, core: Optional[float] = None) -> np.ndarray:
    """
    Closed-form Born amplitude of the Yukawa potential, -2g / (q^2 + mu^2).

    With ``core`` the smoothed-core catalog profile is used, which subtracts
    two terms with nu = 1/core.
    """
    q2 = np.asarray(momentum_transfer, dtype=float) ** 2
    result = 1.0 / (q2 + mu * mu)
    if core is not None:
        nu = 1.0 / core
        result = result - 1.0 / (q2 + nu * nu) - (nu * nu - mu * mu) / (q2 + nu * nu) ** 2
    return -2.0 * g * result


def incident_error_prediction(points, wave: WaveContext) -> float:
    """
    Leading O(1/D) size of |incident_D / b_D - e^{ik.x}| from the second-order
    expansion |x - q_D| = D + n.x + (|x|^2 - (n.x)^2) / (2D).
    """
    points = np.atleast_2d(points)
    along = points @ wave.direction
    transverse = np.sum(points ** 2, axis=1) - along ** 2
    return float(np.max(np.abs(1j * wave.k_abs * transverse / 2.0 - along)) / wave.distance)


def convergence_study(potential: Potential, form_factor: FormFactor, wave: WaveContext, distances, grid: Grid3,
                      dirs: DirectionGrid, sigma: Optional[float] = None,
                      tol: Optional[float] = None, workers: Optional[int] = None) -> ConvergenceReport:
    """
    Measure A_D -> A, incident_D / b_D -> e^{ik.x} and a_D -> a as the source recedes.

    :param potential: scattering potential.
    :param form_factor: source.
    :param wave: base wave context; its distance is replaced by each entry of ``distances``.
    :param distances: increasing source distances.
    :param grid: interaction grid.
    :param dirs: directions for the amplitude error.
    :param sigma: weight exponent of the field norm.
    :param tol: solver tolerance.
    :param workers: thread pool size of the resolvent.
    :return: report with error sequences, fitted log-log slopes and monotonicity flags.
    """
    distances = [float(value) for value in distances]
    if np.any(np.diff(distances) <= 0):
        raise ValidationError('Source distances must be strictly increasing.')
    sigma = settings.SCATTERLAB_WEIGHT_SIGMA if sigma is None else sigma
    solver = LippmannSchwingerSolver(potential, grid, wave.energy, tol=tol, workers=workers)
    plane = solver.plane(wave)
    plane_amplitude = amplitude(plane, dirs).amplitudes
    plane_wave = wave.plane_wave(solver.points)
    box = solver.active if solver.unknowns else np.ones(grid.size, dtype=bool)

    err_incident, err_field, err_amp, predicted = [], [], [], []
    for distance in distances:
        wave_d = wave.with_distance(distance)
        logger.info('Convergence study at D=%.1f', distance)
        spherical = solver.spherical(form_factor, wave_d)
        b_d = normalization_bD(form_factor, wave_d)
        incident = spherical.incident.values(solver.resolvent, solver.points[box]) / b_d
        err_incident.append(float(np.max(np.abs(incident - plane_wave[box]))))
        difference = normalized_AD(spherical, b_d).values - plane.field.values
        err_field.append(ScalarField(grid=grid, values=difference).weighted_norm(sigma))
        err_amp.append(float(np.max(np.abs(amplitude(spherical, dirs).amplitudes - plane_amplitude))))
        predicted.append(incident_error_prediction(solver.points[box], wave_d))

    report = ConvergenceReport(distances=distances, err_incident=err_incident, err_field=err_field, err_amp=err_amp,
                               predicted_incident=predicted, slopes={}, monotone={}, sigma=sigma,
                               slope_target=settings.SCATTERLAB_CONVERGENCE_SLOPE)
    scale = max(max(err_incident), np.finfo(float).tiny)
    for name, sequence in (('err_incident', err_incident), ('err_field', err_field), ('err_amp', err_amp)):
        sequence = np.asarray(sequence)
        if np.all(sequence <= 1e-14 * scale):
            report.monotone[name] = True
            report.slopes[name] = None
            continue
        report.monotone[name] = bool(np.all(np.diff(sequence) < 0))
        report.slopes[name] = float(np.polyfit(np.log(distances), np.log(sequence), 1)[0])
        if not report.monotone[name]:
            report.messages.append(f'{name} is not monotone decreasing.')
            logger.warning('Convergence study: %s is not monotone: %s', name, sequence)
    report.passed = all(report.monotone.values()) and all(
        slope is None or slope <= report.slope_target for slope in report.slopes.values())
    return report
