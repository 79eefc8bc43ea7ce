import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings

from domain.catalog import FormFactor
from domain.grids import DirectionGrid, ScalarField
from domain.services import fourier_sum
from domain.waves import WaveContext
from scatterlab.exceptions import DomainError, OverlapError

from .utils import diagonal_correction, kernel_values, pairwise_distances, wave_number

logger = logging.getLogger(__name__)

KERNEL_MAGIC = b'SLKM'
# magic, source dims, spacing, energy, number of targets, number of sources
KERNEL_HEADER = struct.Struct('<4s3idd2q')

# Entries per assembled row block.
BLOCK_ENTRIES = 2 ** 22


@dataclass(frozen=True)
class KernelMatrix:
    """
    Dense Nystrom matrix of the free resolvent between source cells and target points.

    ``entries[t, s]`` is h^3 times the kernel, or the ball-integrated kernel when the
    target lies within h/2 of the source cell centre.
    """
    energy: float
    spacing: float
    source_dims: tuple
    source_points: np.ndarray
    target_points: np.ndarray
    entries: np.ndarray

    def __post_init__(self):
        if self.entries.shape != (self.target_points.shape[0], self.source_points.shape[0]):
            raise DomainError(detail='Kernel matrix shape does not match its points.', stage='kernel_matrix')
        if not np.all(np.isfinite(self.entries)):
            raise DomainError(detail='Kernel matrix has non-finite entries.', stage='kernel_matrix')

    def matvec(self, density_values) -> np.ndarray:
        return self.entries @ density_values

    def save(self, path) -> Path:
        """
        Write the little-endian binary format: header, row-major complex entries,
        then target and source coordinates as doubles.
        """
        path = Path(path)
        header = KERNEL_HEADER.pack(KERNEL_MAGIC, *self.source_dims, self.spacing, self.energy,
                                    self.target_points.shape[0], self.source_points.shape[0])
        with path.open('wb') as stream:
            stream.write(header)
            stream.write(np.ascontiguousarray(self.entries, dtype='<c16').tobytes())
            stream.write(np.ascontiguousarray(self.target_points, dtype='<f8').tobytes())
            stream.write(np.ascontiguousarray(self.source_points, dtype='<f8').tobytes())
        logger.info('Saved %dx%d kernel matrix to %s', *self.entries.shape, path)
        return path

    @classmethod
    def load(cls, path) -> 'KernelMatrix':
        raw = Path(path).read_bytes()
        magic, nx, ny, nz, spacing, energy, n_targets, n_sources = KERNEL_HEADER.unpack_from(raw)
        if magic != KERNEL_MAGIC:
            raise DomainError(detail=f'{path} is not a kernel matrix file.', stage='kernel_matrix')
        offset = KERNEL_HEADER.size
        entries = np.frombuffer(raw, dtype='<c16', count=n_targets * n_sources, offset=offset)
        offset += entries.nbytes
        targets = np.frombuffer(raw, dtype='<f8', count=3 * n_targets, offset=offset)
        offset += targets.nbytes
        sources = np.frombuffer(raw, dtype='<f8', count=3 * n_sources, offset=offset)
        return cls(energy=energy, spacing=spacing, source_dims=(nx, ny, nz),
                   source_points=sources.reshape(n_sources, 3).astype(float),
                   target_points=targets.reshape(n_targets, 3).astype(float),
                   entries=entries.reshape(n_targets, n_sources).astype(complex))


@dataclass(frozen=True)
class FarField:
    """Coefficient phi(theta) of e^{i|k||x|}/|x| in the far field of R0 applied to a density."""
    dirs: DirectionGrid
    coefficients: np.ndarray
    k_abs: float
    remainder_order: Optional[float] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)):
            raise DomainError(detail='Far-field coefficient is not finite.', stage='far_field_coefficient')


@dataclass
class RemainderDecay:
    direction: np.ndarray
    radii: np.ndarray
    remainders: np.ndarray
    slope: float
    exact: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            'direction': [float(value) for value in self.direction],
            'radii': [float(value) for value in self.radii],
            'remainders': [float(value) for value in self.remainders],
            'slope': None if self.exact else self.slope,
            'exact': self.exact,
            'passed': self.passed,
        }


class FreeResolvent:
    """
    Outgoing free resolvent R0(E + i0) of -1/2 Laplacian on midpoint-rule grids.

    Row blocks of the kernel are built and consumed in a thread pool; each block
    is independent, so the pool size only affects wall time.
    """

    def __init__(self, energy: float, workers: Optional[int] = None):
        self.energy = float(energy)
        self.k_abs = wave_number(energy)
        self.workers = workers or settings.SCATTERLAB_WORKERS

    def block(self, targets: np.ndarray, sources: np.ndarray, spacing: float) -> np.ndarray:
        """
        Kernel entries between ``targets`` and source cell centres, with the
        ball-integrated self-cell value where a target is within h/2 of a source.
        """
        distances = pairwise_distances(targets, sources)
        near = distances < spacing / 2.0
        entries = spacing ** 3 * kernel_values(self.k_abs, np.where(near, 1.0, distances))
        if near.any():
            entries[near] = diagonal_correction(self.energy, spacing)
        return entries

    def assemble(self, targets, sources, spacing: float, source_dims: tuple = (0, 0, 0)) -> KernelMatrix:
        """
        Dense kernel matrix between target points and source cells.

        :param targets: ``(M, 3)`` target points.
        :param sources: ``(N, 3)`` source cell centres.
        :param spacing: source cell spacing.
        :param source_dims: dims of the grid the sources were taken from.
        :return: kernel matrix.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        sources = np.atleast_2d(np.asarray(sources, dtype=float))
        logger.info('Assembling %dx%d kernel matrix at E=%.4f', targets.shape[0], sources.shape[0], self.energy)
        entries = np.empty((targets.shape[0], sources.shape[0]), dtype=complex)

        def fill(rows: slice):
            entries[rows] = self.block(targets[rows], sources, spacing)

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            list(pool.map(fill, self._row_blocks(targets.shape[0], sources.shape[0])))
        return KernelMatrix(energy=self.energy, spacing=spacing, source_dims=tuple(source_dims),
                            source_points=sources, target_points=targets, entries=entries)

    def apply_values(self, targets, sources, values, spacing: float) -> np.ndarray:
        """Sum over source cells of kernel entries times density values, without storing the matrix."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        result = np.zeros(targets.shape[0], dtype=complex)
        keep = values != 0
        if not keep.any():
            return result
        sources, values = sources[keep], values[keep]

        def fill(rows: slice):
            result[rows] = self.block(targets[rows], sources, spacing) @ values

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            list(pool.map(fill, self._row_blocks(targets.shape[0], sources.shape[0])))
        return result

    def apply(self, density: ScalarField, targets) -> np.ndarray:
        """
        R0 applied to a grid density and evaluated at ``targets`` by the midpoint rule.

        :param density: compactly supported density.
        :param targets: ``(M, 3)`` points.
        :return: complex values at the targets.
        """
        return self.apply_values(targets, density.grid.points(), density.flat, density.grid.spacing)

    def incident_spherical(self, form_factor: FormFactor, wc: WaveContext, targets) -> np.ndarray:
        """
        Spherical incident wave |q| R0 rho(. - q) from the source placed at q_D = -n D.

        :raises OverlapError: when a target lies inside the shifted source support.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        center = wc.source_position
        gap = np.min(np.linalg.norm(targets - center, axis=1))
        if gap < form_factor.support_radius:
            raise OverlapError(detail=f'Target at distance {gap:.3f} from the source centre lies inside its '
                                      f'support of radius {form_factor.support_radius:.3f}.')
        density = form_factor.density(center=center)
        return wc.distance * self.apply(density, targets)

    def far_field_coefficient(self, density: ScalarField, dirs: DirectionGrid) -> FarField:
        """
        phi(theta) = (1/2 pi) sum over cells of e^{-i|k| theta.y} density(y) h^3.

        :param density: compactly supported density.
        :param dirs: directions theta.
        :return: far field on ``dirs``.
        """
        coefficients = fourier_sum(density.grid.points(), density.flat * density.grid.cell_volume,
                                   -self.k_abs * dirs.points) / (2.0 * np.pi)
        return FarField(dirs=dirs, coefficients=coefficients, k_abs=self.k_abs)

    def far_field_remainder_decay(self, density: ScalarField, direction, radii) -> RemainderDecay:
        """
        Log-log slope of |R0 density(R theta) - phi(theta) e^{i|k|R}/R| over ``radii``.

        :param density: compactly supported density.
        :param direction: unit vector theta.
        :param radii: strictly increasing radii outside the density grid.
        :return: remainder decay; a vanishing remainder is reported as exact.
        """
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        radii = np.asarray(radii, dtype=float)
        if radii.size < 2 or np.any(np.diff(radii) <= 0):
            raise DomainError(detail='Sample radii must be strictly increasing.', stage='far_field_remainder_decay')
        targets = radii[:, None] * direction[None, :]
        if np.any(density.grid.contains(targets)):
            raise DomainError(detail='Sample radii reach inside the density support.',
                              stage='far_field_remainder_decay')

        near_field = self.apply(density, targets)
        phi = self.far_field_coefficient(density, DirectionGrid.single(direction)).coefficients[0]
        leading = phi * np.exp(1j * self.k_abs * radii) / radii
        remainders = np.abs(near_field - leading)

        scale = max(float(np.max(np.abs(leading))), np.finfo(float).tiny)
        if np.max(remainders) <= 1e-13 * scale:
            return RemainderDecay(direction=direction, radii=radii, remainders=remainders, slope=-np.inf,
                                  exact=True, passed=True)
        slope = float(np.polyfit(np.log(radii), np.log(remainders), 1)[0])
        passed = slope <= settings.SCATTERLAB_REMAINDER_SLOPE + settings.SCATTERLAB_REMAINDER_SLOPE_TOL
        logger.info('Far-field remainder slope %.3f along %s (passed=%s)', slope, direction, passed)
        return RemainderDecay(direction=direction, radii=radii, remainders=remainders, slope=slope,
                              exact=False, passed=passed)

    def _row_blocks(self, n_rows: int, n_columns: int) -> list:
        rows = max(1, min(settings.SCATTERLAB_ASSEMBLY_BLOCK_ROWS, BLOCK_ENTRIES // max(n_columns, 1)))
        return [slice(start, min(start + rows, n_rows)) for start in range(0, n_rows, rows)]


def apply_R0(density: ScalarField, energy: float, targets, workers: Optional[int] = None) -> np.ndarray:
    """
    Outgoing free resolvent applied to ``density`` at ``targets``.

    :param density: compactly supported density.
    :param energy: positive energy E.
    :param targets: ``(M, 3)`` points.
    :param workers: thread pool size.
    :return: complex values at the targets.
    """
    return FreeResolvent(energy, workers=workers).apply(density, targets)
