from dataclasses import dataclass

import numpy as np
from rest_framework.serializers import ValidationError


@dataclass(frozen=True)
class WaveContext:
    """
    Incident wave vector together with the distance of the spherical source.

    The source sits at ``q_D = -n * D`` with ``n = k / |k|``.
    """
    k: tuple
    distance: float = 100.0

    def __post_init__(self):
        k = tuple(float(value) for value in self.k)
        if len(k) != 3:
            raise ValidationError('Wave vector needs three components.')
        if not np.linalg.norm(k) > 0:
            raise ValidationError('Wave vector must be nonzero.')
        if not self.distance > 0:
            raise ValidationError(f'Source distance must be positive, got {self.distance}.')
        object.__setattr__(self, 'k', k)
        object.__setattr__(self, 'distance', float(self.distance))

    @classmethod
    def along(cls, k_abs: float, direction=(0.0, 0.0, 1.0), distance: float = 100.0) -> 'WaveContext':
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        return cls(k=tuple(k_abs * direction), distance=distance)

    @property
    def k_vector(self) -> np.ndarray:
        return np.asarray(self.k)

    @property
    def k_abs(self) -> float:
        return float(np.linalg.norm(self.k))

    @property
    def energy(self) -> float:
        return 0.5 * self.k_abs ** 2

    @property
    def direction(self) -> np.ndarray:
        return self.k_vector / self.k_abs

    @property
    def source_position(self) -> np.ndarray:
        return -self.direction * self.distance

    def with_distance(self, distance: float) -> 'WaveContext':
        return WaveContext(k=self.k, distance=distance)

    def plane_wave(self, points) -> np.ndarray:
        return np.exp(1j * (np.atleast_2d(points) @ self.k_vector))

    def to_dict(self) -> dict:
        return {'k': list(self.k), 'distance': self.distance, 'energy': self.energy}
