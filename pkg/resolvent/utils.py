import numpy as np
from scipy.spatial.distance import cdist

from scatterlab.exceptions import DomainError, SingularPointError

# Below this |k| a the closed-form ball integral loses digits to cancellation.
SERIES_THRESHOLD = 1e-3


def wave_number(energy: float) -> float:
    if energy < 0:
        raise DomainError(detail=f'The outgoing resolvent needs E >= 0, got {energy}.', stage='resolvent')
    return float(np.sqrt(2.0 * energy))


def ball_radius(spacing: float) -> float:
    """Radius of the ball with the volume of one cell."""
    return (3.0 * spacing ** 3 / (4.0 * np.pi)) ** (1.0 / 3.0)


def kernel(energy: float, x, y) -> complex:
    """
    Outgoing free resolvent kernel e^{i|k||x-y|} / (2 pi |x-y|) with |k| = sqrt(2E).

    :raises SingularPointError: when x and y coincide.
    """
    distance = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    if distance == 0:
        raise SingularPointError(detail=f'Kernel evaluated at coinciding points {x}.')
    return complex(np.exp(1j * wave_number(energy) * distance) / (2.0 * np.pi * distance))


def kernel_values(k_abs: float, distances: np.ndarray) -> np.ndarray:
    """Vectorized kernel for strictly positive distances."""
    return np.exp(1j * k_abs * distances) / (2.0 * np.pi * distances)


def diagonal_correction(energy: float, spacing: float) -> complex:
    """
    Integral of the kernel over the ball with the volume of one cell.

    Equals 2 int_0^a r e^{i k r} dr = (2/k^2)(e^{ika}(1 - ika) - 1), which tends to a^2 as k -> 0.
    """
    if not spacing > 0:
        raise DomainError(detail=f'Cell spacing must be positive, got {spacing}.', stage='diagonal_correction')
    k_abs = wave_number(energy)
    radius = ball_radius(spacing)
    ka = k_abs * radius
    if ka < SERIES_THRESHOLD:
        return complex(radius ** 2 * (1.0 + 2j * ka / 3.0 - ka ** 2 / 4.0 - 1j * ka ** 3 / 15.0))
    return complex(2.0 / k_abs ** 2 * (np.exp(1j * ka) * (1.0 - 1j * ka) - 1.0))


def pairwise_distances(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    return cdist(np.atleast_2d(targets), np.atleast_2d(sources))
