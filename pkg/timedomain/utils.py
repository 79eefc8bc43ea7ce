import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.conf import settings
from scipy import optimize, sparse
from scipy.linalg import solve_banded

from domain.grids import Grid3
from scatterlab.exceptions import DomainError

logger = logging.getLogger(__name__)


def laplacian_1d(cells: int, spacing: float) -> sparse.csr_matrix:
    """Second difference with zero Dirichlet values outside the interval."""
    diagonals = [np.full(cells - 1, 1.0), np.full(cells, -2.0), np.full(cells - 1, 1.0)]
    return sparse.diags(diagonals, [-1, 0, 1], format='csr') / spacing ** 2


def laplacian_matrix(grid: Grid3) -> sparse.csr_matrix:
    """Seven-point Laplacian on the grid cells in row-major order, Dirichlet outside the box."""
    nx, ny, nz = grid.dims
    h = grid.spacing
    eye = [sparse.identity(n, format='csr') for n in grid.dims]
    return (sparse.kron(sparse.kron(laplacian_1d(nx, h), eye[1]), eye[2])
            + sparse.kron(sparse.kron(eye[0], laplacian_1d(ny, h)), eye[2])
            + sparse.kron(sparse.kron(eye[0], eye[1]), laplacian_1d(nz, h))).tocsr()


def layer_thickness(grid: Grid3, fraction: Optional[float] = None) -> float:
    fraction = settings.SCATTERLAB_ABSORBER_FRACTION if fraction is None else fraction
    return float(fraction * np.min(grid.upper - grid.lower))


def absorbing_profile(grid: Grid3, strength: float, fraction: Optional[float] = None) -> np.ndarray:
    """
    Quartic ramp W(x) = strength * s^4 over the outer layer of the box.

    ``s`` is the depth into the layer divided by its thickness, taken over the
    deepest axis. W vanishes on the physical interior.
    """
    thickness = layer_thickness(grid, fraction)
    if strength == 0 or thickness == 0:
        return np.zeros(grid.size)
    points = grid.points()
    depth = np.maximum(thickness - np.minimum(points - grid.lower, grid.upper - points), 0.0)
    ramp = np.max(depth, axis=1) / thickness
    return strength * ramp ** 4


def discrete_wave_number(energy: float, spacing: float) -> float:
    """Wave number of the three-point lattice at energy E: cos(kh) = 1 - E h^2."""
    argument = 1.0 - energy * spacing ** 2
    if not -1.0 < argument < 1.0:
        raise DomainError(detail=f'Energy {energy} is not resolved by spacing {spacing}.', stage='calibrate_absorber')
    return float(np.arccos(argument) / spacing)


@dataclass
class AbsorberCalibration:
    strength: float
    reflection: float
    thickness: float
    k_abs: float
    spacing: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            'strength': self.strength,
            'reflection': self.reflection,
            'thickness': self.thickness,
            'k_abs': self.k_abs,
            'spacing': self.spacing,
            'passed': self.passed,
        }


def layer_reflection(strength: float, k_abs: float, spacing: float, thickness: float) -> float:
    """
    Reflection coefficient of the quartic layer for a 1-D lattice wave.

    A unit wave enters from the left boundary; the interior solution is fitted
    to A e^{i kappa x} + B e^{-i kappa x} and |B / A| is returned.
    """
    energy = 0.5 * k_abs ** 2
    kappa = discrete_wave_number(energy, spacing)
    interior = int(np.ceil(4.0 * 2.0 * np.pi / kappa / spacing))
    layer = max(int(np.ceil(thickness / spacing)), 1)
    cells = interior + layer
    x = (np.arange(cells) + 1) * spacing
    depth = np.clip((x - interior * spacing) / (layer * spacing), 0.0, 1.0)
    absorber = strength * depth ** 4

    # -1/2 u'' - (E + i W) u = 0, u_0 = 1, u_{cells+1} = 0
    off = -0.5 / spacing ** 2
    banded = np.zeros((3, cells), dtype=complex)
    banded[0, 1:] = off
    banded[1, :] = 1.0 / spacing ** 2 - energy - 1j * absorber
    banded[2, :-1] = off
    rhs = np.zeros(cells, dtype=complex)
    rhs[0] = -off
    solution = solve_banded((1, 1), banded, rhs)

    fit = slice(interior // 4, 3 * interior // 4)
    basis = np.stack([np.exp(1j * kappa * x[fit]), np.exp(-1j * kappa * x[fit])], axis=1)
    (forward, backward), *_ = np.linalg.lstsq(basis, solution[fit], rcond=None)
    return float(abs(backward) / abs(forward))


def calibrate_absorber(k_abs: float, spacing: float, thickness: float,
                       target: Optional[float] = None) -> AbsorberCalibration:
    """
    Strength of the quartic layer minimizing the 1-D lattice reflection at |k|.

    :param k_abs: wave number of the driving frequency.
    :param spacing: lattice spacing of the evolution grid.
    :param thickness: layer thickness.
    :param target: reflection below which the calibration passes.
    :return: calibration; a failed target is logged, not raised.
    """
    target = settings.SCATTERLAB_ABSORBER_REFLECTION if target is None else target
    if not thickness > 0:
        raise DomainError(detail='Absorbing layer thickness must be positive.', stage='calibrate_absorber')
    objective = lambda log_strength: layer_reflection(10.0 ** log_strength, k_abs, spacing, thickness)
    candidates = np.linspace(-3.0, 3.0, 61)
    best = candidates[int(np.argmin([objective(value) for value in candidates]))]
    result = optimize.minimize_scalar(objective, bounds=(best - 0.1, best + 0.1), method='bounded',
                                      options={'xatol': 1e-4})
    strength = float(10.0 ** result.x)
    reflection = float(result.fun)
    passed = reflection < target
    if not passed:
        logger.warning('Absorbing layer of thickness %.3f reflects %.2e at |k|=%.3f (target %.1e)',
                       thickness, reflection, k_abs, target)
    logger.info('Calibrated absorber: strength %.4g, reflection %.2e', strength, reflection)
    return AbsorberCalibration(strength=strength, reflection=reflection, thickness=thickness, k_abs=k_abs,
                               spacing=spacing, passed=passed)
