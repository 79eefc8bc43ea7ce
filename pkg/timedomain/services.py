import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings
from scipy import sparse
from scipy.sparse.linalg import bicgstab, splu, spsolve

from domain.catalog import FormFactor, Potential
from domain.grids import Grid3, ScalarField
from domain.waves import WaveContext
from flux.services import current_density, divergence_of
from resolvent.services import FreeResolvent
from scatterlab.exceptions import BlowUpError, DomainError, IterationLimitError
from stationary.services import IncidentWave, LippmannSchwingerSolver

from .utils import absorbing_profile, calibrate_absorber, laplacian_matrix, layer_thickness

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvolutionState:
    psi: ScalarField
    time: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi.values) ** 2) * self.psi.grid.cell_volume))


@dataclass
class Trajectory:
    """Strided snapshots of one driven evolution together with everything needed to analyse them."""
    grid: Grid3
    dt: float
    stride: int
    wave: WaveContext
    source: np.ndarray
    potential_values: np.ndarray
    absorber: np.ndarray
    states: list = field(default_factory=list)

    @property
    def energy(self) -> float:
        return self.wave.energy

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.energy

    @property
    def times(self) -> np.ndarray:
        return np.array([state.time for state in self.states])

    def drive(self, time: float) -> np.ndarray:
        """rho_q e^{-i E t} on the grid cells."""
        return self.source * np.exp(-1j * self.energy * time)

    def physical_interior(self) -> np.ndarray:
        """Cells where the absorbing potential vanishes, without the outermost cell layer."""
        mask = (self.absorber == 0).reshape(self.grid.dims)
        border = np.zeros(self.grid.dims, dtype=bool)
        border[1:-1, 1:-1, 1:-1] = True
        return (mask & border).ravel()

    def export(self, directory) -> Path:
        """
        Flat little-endian complex snapshots with a JSON sidecar.

        :param directory: output directory, created when missing.
        :return: path of the sidecar.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for index, state in enumerate(self.states):
            name = f'snapshot_{index:05d}.bin'
            (directory / name).write_bytes(np.ascontiguousarray(state.psi.flat, dtype='<c16').tobytes())
            files.append(name)
        sidecar = directory / 'trajectory.json'
        sidecar.write_text(json.dumps({
            'grid': self.grid.to_dict(),
            'dt': self.dt,
            'stride': self.stride,
            'energy': self.energy,
            'times': [float(value) for value in self.times],
            'files': files,
        }, indent=2, sort_keys=True))
        logger.info('Exported %d snapshots to %s', len(files), directory)
        return sidecar


@dataclass
class LimitAmplitudeEstimate:
    field: ScalarField
    window: tuple
    times: np.ndarray
    residuals: np.ndarray
    tail_ratio: float
    decreasing: bool
    converged: bool
    messages: list = field(default_factory=list)

    def residuals_to_csv(self, path) -> Path:
        path = Path(path)
        with path.open('w', newline='') as stream:
            writer = csv.writer(stream)
            writer.writerow(['t', 'r'])
            for time, residual in zip(self.times, self.residuals):
                writer.writerow([format(float(time), '.17g'), format(float(residual), '.17g')])
        return path

    def to_dict(self) -> dict:
        return {
            'window': [float(value) for value in self.window],
            'tail_ratio': self.tail_ratio,
            'decreasing': self.decreasing,
            'converged': self.converged,
            'messages': self.messages,
        }


@dataclass
class ContinuityResidual:
    values: np.ndarray
    max_norm: float
    time: float


class CrankNicolsonStepper:
    """
    Trapezoidal steps of i d/dt psi = (-1/2 Laplacian + V - i W) psi - f(t).

    Small grids use one sparse LU factorization of the left-hand matrix; larger
    grids solve each step with BiCGSTAB started from the previous state.
    """

    def __init__(self, grid: Grid3, potential_values, absorber, dt: float):
        if not dt > 0:
            raise DomainError(detail=f'Time step must be positive, got {dt}.', stage='evolve')
        self.dt = dt
        hamiltonian = -0.5 * laplacian_matrix(grid) + sparse.diags(potential_values - 1j * absorber)
        identity = sparse.identity(grid.size, format='csc', dtype=complex)
        self.left = (identity + 0.5j * dt * hamiltonian).tocsc()
        self.right = (identity - 0.5j * dt * hamiltonian).tocsr()
        self._lu = splu(self.left) if grid.size <= settings.SCATTERLAB_STEP_DIRECT_MAX_CELLS else None

    def step(self, psi: np.ndarray, drive_now: np.ndarray, drive_next: np.ndarray) -> np.ndarray:
        rhs = self.right @ psi + 0.5j * self.dt * (drive_now + drive_next)
        if self._lu is not None:
            return self._lu.solve(rhs)
        values, info = bicgstab(self.left, rhs, x0=psi, rtol=settings.SCATTERLAB_STEP_SOLVER_RTOL, atol=0.0)
        if info != 0:
            raise IterationLimitError(detail=f'Time step solve failed with code {info}.', stage='evolve')
        return values


def default_source_distance(grid: Grid3) -> float:
    """In-box source distance, a fixed fraction of the box width."""
    return float(settings.SCATTERLAB_SOURCE_DISTANCE_FRACTION * np.min(grid.upper - grid.lower))


def sample_source(form_factor: FormFactor, grid: Grid3, center) -> np.ndarray:
    """rho(x - q) on the grid cells; point-like sources occupy the cell containing q."""
    center = np.asarray(center, dtype=float)
    if form_factor.point_like:
        return ScalarField.point_like(grid, center, total=form_factor.amplitude).flat.copy()
    return form_factor(grid.points() - center)


def gaussian_packet(grid: Grid3, center=(0.0, 0.0, 0.0), width: float = 1.0, k_vector=(0.0, 0.0, 0.0)) -> ScalarField:
    """Normalized Gaussian packet exp(-|x - c|^2 / (2 width^2) + i k.x)."""
    points = grid.points()
    offsets = points - np.asarray(center, dtype=float)
    values = np.exp(-np.sum(offsets ** 2, axis=1) / (2.0 * width ** 2) + 1j * points @ np.asarray(k_vector, dtype=float))
    values /= np.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_volume)
    return ScalarField(grid=grid, values=values)


def evolve(potential: Potential, form_factor: Optional[FormFactor], wave: WaveContext, grid: Grid3, t_final: float,
           dt: Optional[float] = None, psi0: Optional[ScalarField] = None, stride: Optional[int] = None,
           absorber_strength: Optional[float] = None, absorber_fraction: Optional[float] = None) -> Trajectory:
    """
    Drive the Schrodinger equation with rho_q e^{-i E t} from psi0 and record strided snapshots.

    :param potential: real potential.
    :param form_factor: source placed at q_D of ``wave``; ``None`` runs undriven.
    :param wave: wave context; its energy is the driving frequency.
    :param grid: evolution box.
    :param t_final: simulated time span.
    :param dt: time step, defaults to a fixed multiple of h^2.
    :param psi0: initial state, zero by default.
    :param stride: steps between snapshots, defaults to a fixed number of snapshots per driving period.
    :param absorber_strength: strength of the quartic layer; calibrated when omitted, 0 disables it.
    :param absorber_fraction: layer thickness as a fraction of the box width.
    :return: trajectory starting with the initial state.
    """
    dt = dt or settings.SCATTERLAB_DT_FACTOR * grid.spacing ** 2
    period = 2.0 * np.pi / wave.energy
    stride = stride or max(1, int(period / (settings.SCATTERLAB_SNAPSHOTS_PER_PERIOD * dt)))
    if absorber_strength is None:
        thickness = layer_thickness(grid, absorber_fraction)
        absorber_strength = calibrate_absorber(wave.k_abs, grid.spacing, thickness).strength if thickness else 0.0
    absorber = absorbing_profile(grid, absorber_strength, absorber_fraction)
    potential_values = potential(grid.points())
    source = np.zeros(grid.size, dtype=complex) if form_factor is None else \
        sample_source(form_factor, grid, wave.source_position)

    trajectory = Trajectory(grid=grid, dt=dt, stride=stride, wave=wave, source=source,
                            potential_values=potential_values, absorber=absorber)
    psi = np.zeros(grid.size, dtype=complex) if psi0 is None else psi0.flat.copy()
    trajectory.states.append(EvolutionState(psi=ScalarField(grid=grid, values=psi), time=0.0))

    stepper = CrankNicolsonStepper(grid, potential_values, absorber, dt)
    steps = int(round(t_final / dt))
    logger.info('Evolving %d cells for %d steps of dt=%.4g (snapshot every %d)', grid.size, steps, dt, stride)
    previous_norm = trajectory.states[0].norm
    for index in range(steps):
        psi = stepper.step(psi, trajectory.drive(index * dt), trajectory.drive((index + 1) * dt))
        if (index + 1) % stride and index + 1 != steps:
            continue
        if not np.all(np.isfinite(psi)):
            raise BlowUpError(detail=f'Non-finite state at t={(index + 1) * dt:.4g}.')
        state = EvolutionState(psi=ScalarField(grid=grid, values=psi), time=(index + 1) * dt)
        if previous_norm > 0 and state.norm > settings.SCATTERLAB_BLOWUP_FACTOR * previous_norm:
            raise BlowUpError(detail=f'Norm grew from {previous_norm:.3e} to {state.norm:.3e} at t={state.time:.4g}.')
        previous_norm = state.norm
        trajectory.states.append(state)
    logger.info('Evolution finished at t=%.4g with norm %.4e', trajectory.states[-1].time, previous_norm)
    return trajectory


def extract_limit_amplitude(trajectory: Trajectory, window: Optional[tuple] = None, sigma: Optional[float] = None,
                            rtol: Optional[float] = None) -> LimitAmplitudeEstimate:
    """
    Window average of psi(x, t) e^{i E t} and the residual history against it.

    :param trajectory: driven evolution.
    :param window: ``(t0, t1)``, defaults to the final driving periods.
    :param sigma: weight exponent of the residual norm.
    :param rtol: allowed tail residual relative to the estimate.
    :return: estimate; missing convergence is reported, not raised.
    """
    sigma = settings.SCATTERLAB_WEIGHT_SIGMA if sigma is None else sigma
    rtol = settings.SCATTERLAB_LIMIT_AMPLITUDE_RTOL if rtol is None else rtol
    times = trajectory.times
    periods = settings.SCATTERLAB_LIMIT_WINDOW_PERIODS * trajectory.period
    window = window or (times[-1] - periods, times[-1])
    start, end = window
    if not times[0] <= start < end <= times[-1] + 1e-12:
        raise DomainError(detail=f'Window {window} is outside the simulated span.', stage='extract_limit_amplitude')
    crossing = float(np.max(trajectory.grid.upper - trajectory.grid.lower)) / trajectory.wave.k_abs
    if start < crossing:
        raise DomainError(detail=f'Window starts at {start:.3g}, before the box crossing time {crossing:.3g}.',
                          stage='extract_limit_amplitude')

    grid = trajectory.grid
    mask = trajectory.physical_interior()
    rotated = [state.psi.flat * np.exp(1j * trajectory.energy * state.time) for state in trajectory.states]
    inside = (times > start) & (times <= end + 1e-12)
    estimate = ScalarField(grid=grid, values=np.mean([rotated[index] for index in np.flatnonzero(inside)], axis=0))
    scale = estimate.weighted_norm(sigma, mask)
    residuals = np.array([ScalarField(grid=grid, values=values - estimate.flat).weighted_norm(sigma, mask)
                          for values in rotated])

    messages = []
    tail_ratio = float(np.max(residuals[inside]) / scale) if scale > 0 else 0.0
    approach = (times >= start - periods) & (times <= start)
    if approach.sum() >= 2:
        decreasing = bool(np.polyfit(times[approach], residuals[approach], 1)[0] <= 0)
    else:
        decreasing = False
        messages.append('Too few snapshots before the window to judge the residual trend.')
    if not decreasing:
        messages.append('Residual history is not decreasing before the window.')
    if tail_ratio > rtol:
        messages.append(f'Tail residual {tail_ratio:.3e} exceeds {rtol:.1e} of the estimate.')
    converged = decreasing and tail_ratio <= rtol
    if not converged:
        logger.warning('Limit amplitude not converged: %s', ' '.join(messages))
    return LimitAmplitudeEstimate(field=estimate, window=(float(start), float(end)), times=times, residuals=residuals,
                                  tail_ratio=tail_ratio, decreasing=decreasing, converged=converged, messages=messages)


def limit_amplitude_reference(trajectory: Trajectory, potential: Potential,
                              workers: Optional[int] = None) -> ScalarField:
    """
    Stationary response R(E + i0) rho_q on the evolution grid: R0 rho_q, then the
    Lippmann-Schwinger correction when V is present.
    """
    grid = trajectory.grid
    resolvent = FreeResolvent(trajectory.energy, workers=workers)
    incident = resolvent.apply_values(grid.points(), grid.points(), trajectory.source, grid.spacing)
    if potential.is_zero:
        return ScalarField(grid=grid, values=incident)
    solver = LippmannSchwingerSolver(potential, grid, trajectory.energy, workers=workers)
    return solver.solve(IncidentWave.sampled(trajectory.wave, incident)).field


def discrete_limit_reference(trajectory: Trajectory) -> ScalarField:
    """
    Periodic response of the time stepper itself: (H_h - i W - E_dt) B = rho_q.

    H_h is the seven-point Hamiltonian of the evolution and E_dt = (2 / dt) tan(E dt / 2)
    the energy a Crank-Nicolson step assigns to e^{-iEt}. The window estimate tends to B
    whatever the spatial discretization error of the run.
    """
    grid = trajectory.grid
    shifted = 2.0 / trajectory.dt * np.tan(0.5 * trajectory.energy * trajectory.dt)
    operator = -0.5 * laplacian_matrix(grid) \
        + sparse.diags(trajectory.potential_values - 1j * trajectory.absorber - shifted)
    logger.info('Solving the discrete stationary problem on %d cells', grid.size)
    return ScalarField(grid=grid, values=spsolve(operator.tocsc(), trajectory.source))


def limit_amplitude_error(estimate: LimitAmplitudeEstimate, reference: ScalarField, mask=None,
                          sigma: Optional[float] = None) -> float:
    """Relative weighted-norm distance between the window estimate and a stationary field."""
    sigma = settings.SCATTERLAB_WEIGHT_SIGMA if sigma is None else sigma
    difference = ScalarField(grid=reference.grid, values=estimate.field.values - reference.values)
    return difference.weighted_norm(sigma, mask) / reference.weighted_norm(sigma, mask)


def continuity_residual(trajectory: Trajectory, index: int) -> ContinuityResidual:
    """
    Discrete d/dt |psi|^2 + div j - 2 Im(psi conj f) between snapshots ``index`` and ``index + 1``.

    Evaluated at the midpoint state on the physical interior; other cells are zero.
    """
    first, second = trajectory.states[index], trajectory.states[index + 1]
    step = second.time - first.time
    midpoint = 0.5 * (first.psi.values + second.psi.values)
    drive = 0.5 * (trajectory.drive(first.time) + trajectory.drive(second.time)).reshape(trajectory.grid.dims)
    density_rate = (np.abs(second.psi.values) ** 2 - np.abs(first.psi.values) ** 2) / step
    divergence = divergence_of(current_density(midpoint, trajectory.grid.spacing), trajectory.grid.spacing)
    residual = density_rate + divergence - 2.0 * np.imag(midpoint * np.conj(drive))
    values = np.where(trajectory.physical_interior().reshape(trajectory.grid.dims), residual, 0.0)
    return ContinuityResidual(values=values, max_norm=float(np.max(np.abs(values))), time=0.5 * (first.time + second.time))
