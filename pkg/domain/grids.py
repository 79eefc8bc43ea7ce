"""Cartesian cell-centred grids, complex fields on them, and sphere quadratures."""
import itertools
import math
from dataclasses import dataclass

import numpy as np
from rest_framework.serializers import ValidationError

FOUR_PI = 4.0 * math.pi

# Octahedral orbit generators. Code 0: (1,0,0); 1: (0,a,a), a=1/sqrt(2); 2: (a,a,a), a=1/sqrt(3);
# 3: (a,a,b), b=sqrt(1-2a^2); 4: (a,b,0), b=sqrt(1-a^2). Weights sum to one per rule.
OCTAHEDRAL_RULES = {
    6: ((0, 0.0, 0.1666666666666667),),
    14: ((0, 0.0, 0.6666666666666667e-1),
         (2, 0.0, 0.7500000000000000e-1)),
    26: ((0, 0.0, 0.4761904761904762e-1),
         (1, 0.0, 0.3809523809523810e-1),
         (2, 0.0, 0.3214285714285714e-1)),
    50: ((0, 0.0, 0.1269841269841270e-1),
         (1, 0.0, 0.2257495590828924e-1),
         (2, 0.0, 0.2109375000000000e-1),
         (3, 0.3015113445777636, 0.2017333553791887e-1)),
    110: ((0, 0.0, 0.3828270494937162e-2),
          (2, 0.0, 0.9793737512487512e-2),
          (3, 0.1851156353447362, 0.8211737283191111e-2),
          (3, 0.6904210483822922, 0.9942814891178103e-2),
          (3, 0.3956894730559419, 0.9595471336070963e-2),
          (4, 0.4783690288121502, 0.9694996361663028e-2)),
}


@dataclass(frozen=True)
class Grid3:
    """
    Uniform cell-centred box grid.

    Cell centres are ``origin + (i + 1/2) * spacing`` per axis, with ``i`` running over ``dims``.
    """
    origin: tuple
    spacing: float
    dims: tuple

    def __post_init__(self):
        origin = tuple(float(value) for value in self.origin)
        dims = tuple(int(value) for value in self.dims)
        if len(origin) != 3 or len(dims) != 3:
            raise ValidationError('Grid3 needs three origin components and three cell counts.')
        if not self.spacing > 0:
            raise ValidationError(f'Grid spacing must be positive, got {self.spacing}.')
        if min(dims) < 2:
            raise ValidationError(f'Grid needs at least two cells per axis, got {dims}.')
        object.__setattr__(self, 'origin', origin)
        object.__setattr__(self, 'spacing', float(self.spacing))
        object.__setattr__(self, 'dims', dims)

    @classmethod
    def covering(cls, lower, upper, spacing: float) -> 'Grid3':
        """
        Smallest grid with the given spacing whose box contains ``[lower, upper]``.

        The grid is centred on the box midpoint.
        """
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        dims = np.maximum(np.ceil((upper - lower) / spacing - 1e-9).astype(int), 2)
        center = 0.5 * (lower + upper)
        origin = center - 0.5 * dims * spacing
        return cls(origin=tuple(origin), spacing=spacing, dims=tuple(dims))

    @classmethod
    def cube(cls, center, half_width: float, cells: int) -> 'Grid3':
        """Cubic grid of ``cells`` per axis spanning ``center +- half_width``."""
        center = np.asarray(center, dtype=float)
        spacing = 2.0 * half_width / cells
        origin = center - half_width
        return cls(origin=tuple(origin), spacing=spacing, dims=(cells, cells, cells))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.dims) * self.spacing

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def axes(self) -> tuple:
        """Cell-centre coordinates along each axis."""
        return tuple(self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing for axis in range(3))

    def mesh(self) -> tuple:
        return np.meshgrid(*self.axes(), indexing='ij')

    def points(self) -> np.ndarray:
        """Cell centres as an ``(N, 3)`` array in row-major cell order."""
        return np.stack([component.ravel() for component in self.mesh()], axis=-1)

    def radii(self) -> np.ndarray:
        x, y, z = self.mesh()
        return np.sqrt(x * x + y * y + z * z)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        """Mask of points lying inside the grid box shrunk by ``margin``."""
        points = np.atleast_2d(points)
        inside = (points >= self.lower + margin) & (points <= self.upper - margin)
        return np.all(inside, axis=-1)

    def refined(self) -> 'Grid3':
        """Same box with half the spacing."""
        return Grid3(origin=self.origin, spacing=self.spacing / 2.0, dims=tuple(2 * n for n in self.dims))

    def nearest_index(self, point) -> tuple:
        index = np.floor((np.asarray(point, dtype=float) - self.lower) / self.spacing).astype(int)
        return tuple(np.clip(index, 0, np.asarray(self.dims) - 1))

    def to_dict(self) -> dict:
        return {'origin': list(self.origin), 'spacing': self.spacing, 'dims': list(self.dims)}


def japanese_bracket(points) -> np.ndarray:
    """<x> = sqrt(1 + |x|^2) for an ``(N, 3)`` array of positions."""
    points = np.atleast_2d(points)
    return np.sqrt(1.0 + np.sum(points * points, axis=-1))


@dataclass(frozen=True)
class ScalarField:
    """Complex samples on the cell centres of a grid. Values are read-only after construction."""
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=complex).reshape(self.grid.dims)
        if not np.all(np.isfinite(values)):
            raise ValidationError('ScalarField values must be finite.')
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, grid: Grid3) -> 'ScalarField':
        return cls(grid=grid, values=np.zeros(grid.dims, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid3, function) -> 'ScalarField':
        return cls(grid=grid, values=np.asarray(function(grid.points())).reshape(grid.dims))

    @classmethod
    def point_like(cls, grid: Grid3, point, total: complex = 1.0) -> 'ScalarField':
        """Single-cell density with integral ``total`` in the cell containing ``point``."""
        values = np.zeros(grid.dims, dtype=complex)
        values[grid.nearest_index(point)] = total / grid.cell_volume
        return cls(grid=grid, values=values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> 'ScalarField':
        return ScalarField(grid=self.grid, values=values)

    def scaled(self, factor: complex) -> 'ScalarField':
        return ScalarField(grid=self.grid, values=self.values * factor)

    def integral(self) -> complex:
        return complex(np.sum(self.values) * self.grid.cell_volume)

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def weighted_norm(self, sigma: float, mask=None) -> float:
        """Discrete L2 norm with weight <x>^-sigma, optionally restricted to ``mask`` cells."""
        weight = japanese_bracket(self.grid.points()) ** (-sigma)
        weighted = np.abs(self.flat) * weight
        if mask is not None:
            weighted = weighted[np.asarray(mask).ravel()]
        return float(np.sqrt(np.sum(weighted ** 2) * self.grid.cell_volume))


@dataclass(frozen=True)
class DirectionGrid:
    """Unit vectors with quadrature weights for integration over the unit sphere."""
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.shape[1] != 3 or points.shape[0] != weights.shape[0]:
            raise ValidationError('DirectionGrid needs one weight per 3-vector.')
        if np.max(np.abs(np.linalg.norm(points, axis=1) - 1.0)) > 1e-12:
            raise ValidationError('DirectionGrid points must be unit vectors.')
        if abs(np.sum(weights) - FOUR_PI) > 1e-10:
            raise ValidationError(f'DirectionGrid weights must sum to 4*pi, got {np.sum(weights)!r}.')
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)

    @classmethod
    def octahedral(cls, n_points: int) -> 'DirectionGrid':
        """
        Octahedrally symmetric sphere rule with ``n_points`` nodes.

        Available sizes are 6, 14, 26, 50 and 110 (exact for polynomials of degree 3, 5, 7, 11 and 17).
        """
        try:
            rule = OCTAHEDRAL_RULES[n_points]
        except KeyError:
            raise ValidationError(f'No octahedral rule with {n_points} points; '
                                  f'available: {sorted(OCTAHEDRAL_RULES)}.')
        points, weights = [], []
        for code, a, weight in rule:
            orbit = _octahedral_orbit(code, a)
            points.extend(orbit)
            weights.extend([weight] * len(orbit))
        return cls(points=np.array(points), weights=FOUR_PI * np.array(weights))

    @classmethod
    def product(cls, n_theta: int, n_phi: int) -> 'DirectionGrid':
        """Gauss-Legendre nodes in cos(theta) times uniform nodes in phi."""
        cos_theta, theta_weights = np.polynomial.legendre.leggauss(n_theta)
        phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        cos_grid, phi_grid = np.meshgrid(cos_theta, phi, indexing='ij')
        sin_grid = np.sqrt(1.0 - cos_grid ** 2)
        points = np.stack([sin_grid * np.cos(phi_grid), sin_grid * np.sin(phi_grid), cos_grid], axis=-1)
        weights = np.repeat(theta_weights, n_phi) * (2.0 * np.pi / n_phi)
        return cls(points=points.reshape(-1, 3), weights=weights)

    @classmethod
    def single(cls, direction) -> 'DirectionGrid':
        direction = np.asarray(direction, dtype=float)
        return cls(points=direction[None, :] / np.linalg.norm(direction), weights=np.array([FOUR_PI]))

    @classmethod
    def default(cls) -> 'DirectionGrid':
        from django.conf import settings
        return cls.octahedral(settings.SCATTERLAB_DIRECTION_GRID_POINTS)

    @classmethod
    def from_config(cls, section: dict) -> 'DirectionGrid':
        """Build from ``{'rule': 'octahedral', 'points': n}`` or ``{'rule': 'product', 'n_theta', 'n_phi'}``."""
        if section.get('rule', 'octahedral') == 'product':
            return cls.product(section['n_theta'], section['n_phi'])
        return cls.octahedral(section.get('points', 110))

    def __len__(self) -> int:
        return self.points.shape[0]

    def integrate(self, values) -> complex:
        return np.sum(self.weights * np.asarray(values))


def _octahedral_orbit(code: int, a: float) -> list:
    if code == 0:
        representative = (1.0, 0.0, 0.0)
    elif code == 1:
        s = math.sqrt(0.5)
        representative = (0.0, s, s)
    elif code == 2:
        s = math.sqrt(1.0 / 3.0)
        representative = (s, s, s)
    elif code == 3:
        representative = (a, a, math.sqrt(1.0 - 2.0 * a * a))
    elif code == 4:
        representative = (a, math.sqrt(1.0 - a * a), 0.0)
    else:
        raise ValueError(f'Unknown orbit code {code}.')

    orbit = set()
    for permutation in itertools.permutations(representative):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            orbit.add(tuple(0.0 + sign * value for sign, value in zip(signs, permutation)))
    return sorted(orbit)
