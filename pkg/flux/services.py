import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings
from rest_framework.serializers import ValidationError
from scipy.interpolate import RegularGridInterpolator

from domain.catalog import FormFactor
from domain.grids import DirectionGrid, Grid3, ScalarField
from domain.waves import WaveContext
from resolvent.utils import kernel_values, pairwise_distances
from scatterlab.exceptions import DegenerateSourceError, DomainError
from stationary.services import (
    SPHERICAL,
    AmplitudeTable,
    LippmannSchwingerSolver,
    LSSolution,
    amplitude,
    normalization_bD,
    normalized_AD,
)

from .surfaces import SurfacePatch

logger = logging.getLogger(__name__)


def current_density(values: np.ndarray, spacing: float) -> np.ndarray:
    """j = Im(conj(psi) grad psi) with second-order differences, one-sided at the faces."""
    gradient = np.gradient(values, spacing, edge_order=2)
    return np.stack([np.imag(np.conj(values) * component) for component in gradient])


def divergence_of(components: np.ndarray, spacing: float) -> np.ndarray:
    return sum(np.gradient(components[axis], spacing, axis=axis, edge_order=2) for axis in range(3))


@dataclass(frozen=True)
class FluxField:
    """Probability current on the cells of a grid, ``components`` shaped ``(3, nx, ny, nz)``."""
    grid: Grid3
    components: np.ndarray

    def __post_init__(self):
        components = np.asarray(self.components, dtype=float)
        if components.shape != (3, *self.grid.dims):
            raise ValidationError('Flux components must have shape (3, *grid.dims).')
        if not np.all(np.isfinite(components)):
            raise ValidationError('Flux field must be finite.')
        components.flags.writeable = False
        object.__setattr__(self, 'components', components)

    def divergence(self) -> np.ndarray:
        return divergence_of(self.components, self.grid.spacing)

    def at(self, points) -> np.ndarray:
        """Trilinear interpolation of j at ``(M, 3)`` points inside the cell-centre box."""
        points = np.atleast_2d(points)
        axes = self.grid.axes()
        return np.stack([
            RegularGridInterpolator(axes, self.components[axis], method='linear')(points) for axis in range(3)
        ], axis=-1)

    def interior(self, points) -> np.ndarray:
        """Mask of points between the first and last cell centres on every axis."""
        return self.grid.contains(points, margin=0.5 * self.grid.spacing)

    def save(self, path) -> Path:
        """Flat little-endian doubles, one (jx, jy, jz) triple per cell in row-major order."""
        path = Path(path)
        vectors = np.stack([component.ravel() for component in self.components], axis=-1)
        path.write_bytes(np.ascontiguousarray(vectors, dtype='<f8').tobytes())
        return path


@dataclass(frozen=True)
class CrossSectionTable:
    dirs: DirectionGrid
    sigma: np.ndarray

    def total(self) -> float:
        return float(np.real(self.dirs.integrate(self.sigma)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open('w', newline='') as stream:
            writer = csv.writer(stream)
            writer.writerow(['theta_x', 'theta_y', 'theta_z', 'sigma'])
            for direction, sigma in zip(self.dirs.points, self.sigma):
                writer.writerow([format(float(value), '.17g') for value in (*direction, sigma)])
        return path


@dataclass
class ScatteredFluxProfile:
    radii: list
    deviations: list
    ratios: list
    sigma: list
    slope: Optional[float]
    exact: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            'radii': self.radii,
            'deviations': self.deviations,
            'ratios': self.ratios,
            'sigma': self.sigma,
            'slope': self.slope,
            'exact': self.exact,
            'passed': self.passed,
        }


@dataclass
class FluxConvergence:
    distances: list
    fluxes: list
    reference: float
    differences: list
    decreasing: bool

    def to_dict(self) -> dict:
        return {
            'D': self.distances,
            'fluxes': self.fluxes,
            'reference': self.reference,
            'differences': self.differences,
            'decreasing': self.decreasing,
        }


def flux_field(psi: ScalarField) -> FluxField:
    """
    Probability current of a sampled wave function.

    :raises DomainError: when an axis has fewer than three cells.
    """
    if min(psi.grid.dims) < 3:
        raise DomainError(detail='Flux needs at least three cells per axis.', stage='flux_field')
    return FluxField(grid=psi.grid, components=current_density(psi.values, psi.grid.spacing))


def angular_scattered_density(table: AmplitudeTable, b_abs: float = 1.0) -> np.ndarray:
    """j_a^sc(theta) = |b(n)|^2 |a(k, theta)|^2 |k|."""
    return b_abs ** 2 * np.abs(table.amplitudes) ** 2 * table.wave.k_abs


def incident_flux_magnitude(b_abs: float, k_abs: float) -> float:
    return float(b_abs ** 2 * k_abs)


def cross_section(density, j_in_magnitude: float, dirs: DirectionGrid) -> CrossSectionTable:
    """
    sigma(theta) = j_a^sc(theta) / |j^in|.

    :raises DegenerateSourceError: when the incident flux vanishes.
    """
    if not j_in_magnitude > 0:
        raise DegenerateSourceError(detail='Incident flux is zero; the cross section is undefined.',
                                    stage='cross_section')
    return CrossSectionTable(dirs=dirs, sigma=np.asarray(density, dtype=float) / j_in_magnitude)


def surface_flux(field: FluxField, patch: SurfacePatch) -> float:
    """
    Sum of j . nu * area over the patch elements, j interpolated to the centroids.

    :raises DomainError: when the patch leaves the interior of the field grid.
    """
    if not np.all(field.interior(patch.centroids)):
        raise DomainError(detail=f'{patch.name} extends beyond the flux grid interior.', stage='surface_flux')
    values = field.at(patch.centroids)
    return float(np.sum(np.sum(values * patch.normals, axis=1) * patch.areas))


def scattered_wave(solution: LSSolution, points) -> tuple:
    """
    Scattered field -R0(V A) and its gradient at points away from the grid.

    :return: ``(values, gradients)`` with shapes ``(M,)`` and ``(M, 3)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    grid = solution.grid
    if np.any(grid.contains(points)):
        raise DomainError(detail='Scattered-wave points must lie outside the interaction grid.',
                          stage='scattered_wave')
    density = solution.scattering_density() * grid.cell_volume
    keep = density != 0
    sources, density = grid.points()[keep], density[keep]
    k_abs = solution.incident.wave.k_abs

    distances = pairwise_distances(points, sources)
    kernel = kernel_values(k_abs, distances)
    values = -kernel @ density
    radial = (1j * k_abs - 1.0 / distances) * kernel / distances
    gradients = np.stack([-(radial * (points[:, axis][:, None] - sources[:, axis][None, :])) @ density
                          for axis in range(3)], axis=-1)
    return values, gradients


def far_field_flux_profile(solution: LSSolution, dirs: DirectionGrid, radii) -> ScatteredFluxProfile:
    """
    Compare R^2 j^sc(R theta) . theta / (|b|^2 |k|) with sigma(theta) at growing R.

    :param solution: plane or spherical solution.
    :param dirs: directions theta.
    :param radii: increasing radii outside the grid.
    :return: relative pointwise deviation per radius and its fitted log-log slope.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise ValidationError('Flux profile radii must be strictly increasing.')
    wave = solution.incident.wave
    b_squared = 1.0
    if solution.incident.kind == SPHERICAL:
        b_squared = abs(normalization_bD(solution.incident.form_factor, wave)) ** 2
    sigma = amplitude(solution, dirs).cross_section
    floor = max(1e-3 * float(np.max(sigma)), np.finfo(float).tiny)

    deviations, first_ratios = [], None
    for radius in radii:
        values, gradients = scattered_wave(solution, radius * dirs.points)
        outward = np.imag(np.conj(values)[:, None] * gradients)
        ratios = radius ** 2 * np.sum(outward * dirs.points, axis=1) / (b_squared * wave.k_abs)
        if first_ratios is None:
            first_ratios = ratios
        deviations.append(float(np.max(np.abs(ratios - sigma) / np.maximum(sigma, floor))))

    if float(np.max(sigma)) == 0 and max(deviations) == 0:
        slope, exact, passed = None, True, True
    else:
        exact = False
        slope = float(np.polyfit(np.log(radii), np.log(np.maximum(deviations, np.finfo(float).tiny)), 1)[0])
        passed = deviations[0] <= settings.SCATTERLAB_FLUX_MATCH_RTOL and \
            slope <= settings.SCATTERLAB_FLUX_SLOPE + settings.SCATTERLAB_FLUX_SLOPE_TOL
    logger.info('Far-field flux deviations %s, slope %s', deviations, slope)
    return ScatteredFluxProfile(radii=[float(value) for value in radii], deviations=deviations,
                                ratios=[float(value) for value in first_ratios],
                                sigma=[float(value) for value in sigma], slope=slope, exact=exact, passed=passed)


def flux_convergence_in_distance(solver: LippmannSchwingerSolver, form_factor: FormFactor, wave: WaveContext,
                                 distances, patch: SurfacePatch) -> FluxConvergence:
    """
    Flux of j_D / |b_D|^2 through a fixed patch for growing D, against the plane-wave flux.

    :param solver: solver on the interaction grid.
    :param form_factor: source.
    :param wave: base wave context.
    :param distances: increasing source distances.
    :param patch: surface inside the grid interior.
    :return: flux sequence and its distance to the plane-wave flux.
    """
    reference = surface_flux(flux_field(solver.plane(wave).field), patch)
    fluxes = []
    for distance in distances:
        wave_d = wave.with_distance(distance)
        spherical = solver.spherical(form_factor, wave_d)
        normalized = normalized_AD(spherical, normalization_bD(form_factor, wave_d))
        fluxes.append(surface_flux(flux_field(normalized), patch))
    differences = [abs(value - reference) for value in fluxes]
    decreasing = bool(np.all(np.diff(differences) < 0))
    if not decreasing:
        logger.warning('Surface flux does not approach the plane-wave flux monotonically: %s', differences)
    return FluxConvergence(distances=[float(value) for value in distances], fluxes=fluxes, reference=reference,
                           differences=differences, decreasing=decreasing)
