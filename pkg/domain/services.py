import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from django.conf import settings
from scipy import integrate
from scipy.stats import qmc

from scatterlab.exceptions import DomainError, InvalidFormFactorError, InvalidPotentialError, ResolutionError

from .catalog import FormFactor, Potential
from .grids import DirectionGrid, japanese_bracket

logger = logging.getLogger(__name__)

# Complex exponentials evaluated per chunk in source transforms.
TRANSFORM_CHUNK = 2 ** 22


@dataclass
class EnvelopeReport:
    name: str
    passed: bool
    max_weighted: float
    bound: float
    weight_power: float
    sample_radius: float
    samples: int
    worst_point: list = field(default_factory=list)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'passed': self.passed,
            'max_weighted': self.max_weighted,
            'bound': self.bound,
            'weight_power': self.weight_power,
            'sample_radius': self.sample_radius,
            'samples': self.samples,
            'worst_point': self.worst_point,
            'degenerate': self.degenerate,
        }


@dataclass
class WienerReport:
    name: str
    k_abs: float
    minimum: float
    passed: bool
    tol: float
    values: np.ndarray
    refinement_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'k_abs': self.k_abs,
            'minimum': self.minimum,
            'maximum': float(np.max(np.abs(self.values))),
            'passed': self.passed,
            'tol': self.tol,
            'directions': int(self.values.size),
            'refinement_error': self.refinement_error,
        }


def sample_cloud(radius: float, size: Optional[int] = None) -> np.ndarray:
    """
    Deterministic low-discrepancy points filling the cube ``[-radius, radius]^3``.

    :param radius: half-width of the cube.
    :param size: number of points, a power of two keeps the Sobol balance properties.
    :return: ``(size, 3)`` array.
    """
    size = size or settings.SCATTERLAB_VALIDATOR_CLOUD_SIZE
    sampler = qmc.Sobol(d=3, scramble=False)
    exponent = int(np.log2(size))
    if 2 ** exponent == size:
        unit = sampler.random_base2(exponent)
    else:
        unit = sampler.random(size)
    return radius * (2.0 * unit - 1.0)


def source_transform(form_factor: FormFactor, wave_vectors, spacing: Optional[float] = None) -> np.ndarray:
    """
    Transform rho^(xi) = sum over cells of e^{i xi.x} rho(x) h^3 at each row of ``wave_vectors``.

    :param form_factor: source density, centred at the origin.
    :param wave_vectors: ``(M, 3)`` array of xi.
    :param spacing: quadrature spacing, defaults to the source resolution.
    :return: complex array of length M.
    """
    wave_vectors = np.atleast_2d(np.asarray(wave_vectors, dtype=float))
    if form_factor.point_like:
        return np.full(wave_vectors.shape[0], complex(form_factor.amplitude))

    density = form_factor.density(spacing=spacing)
    return fourier_sum(density.grid.points(), density.flat * density.grid.cell_volume, wave_vectors)


def fourier_sum(points, weights, wave_vectors) -> np.ndarray:
    """
    Sum over points of weights * e^{i xi.x} for every row xi of ``wave_vectors``.

    Zero weights are skipped; the phase matrix is built in chunks of directions.
    """
    wave_vectors = np.atleast_2d(wave_vectors)
    keep = weights != 0
    points, weights = points[keep], weights[keep]

    result = np.empty(wave_vectors.shape[0], dtype=complex)
    chunk = max(1, TRANSFORM_CHUNK // max(points.shape[0], 1))
    for start in range(0, wave_vectors.shape[0], chunk):
        phases = points @ wave_vectors[start:start + chunk].T
        result[start:start + chunk] = weights @ np.exp(1j * phases)
    return result


def radial_transform(profile: Callable, kappa: float, max_radius: float) -> float:
    """
    Three-dimensional transform of a radial profile, 4 pi int rho(r) sin(kappa r)/(kappa r) r^2 dr.

    Adaptive 1-D quadrature, independent of any grid.
    """
    if kappa == 0:
        integrand = lambda r: profile(np.asarray(r)) * r * r
    else:
        integrand = lambda r: profile(np.asarray(r)) * np.sinc(kappa * r / np.pi) * r * r
    value, _ = integrate.quad(integrand, 0.0, max_radius, limit=400, epsabs=1e-14, epsrel=1e-12)
    return float(4.0 * np.pi * value)


class HypothesisService:
    """
    Numeric validators for the decay hypotheses on potentials and sources and
    for the Wiener condition on the source transform.
    """

    def __init__(self, cloud_size: Optional[int] = None, step: Optional[float] = None):
        self.cloud_size = cloud_size or settings.SCATTERLAB_VALIDATOR_CLOUD_SIZE
        self.step = step or settings.SCATTERLAB_VALIDATOR_STEP

    def validate_potential(self, potential: Potential, sample_radius: Optional[float] = None,
                           tol: float = 1e-6) -> EnvelopeReport:
        """
        Check <x>^{5+eps} |d^a V| <= C for |a| <= 2 on the validator cloud.

        :param potential: potential to check.
        :param sample_radius: cube half-width, at least the support radius.
        :param tol: relative slack on the envelope constant.
        :return: envelope report.
        """
        sample_radius = self._sample_radius(potential.support_radius, sample_radius, 'validate_potential')
        points = sample_cloud(sample_radius, self.cloud_size)
        derivatives = self._derivative_magnitudes(potential, points)
        if not np.all(np.isfinite(derivatives)):
            raise InvalidPotentialError(detail=f'{potential.name} returned non-finite values on the sample cloud.')

        weight_power = 5.0 + potential.envelope_eps
        return self._report(potential.name, points, derivatives, weight_power, potential.envelope_constant,
                            sample_radius, tol)

    def validate_form_factor(self, form_factor: FormFactor, sample_radius: Optional[float] = None,
                             tol: float = 1e-6) -> EnvelopeReport:
        """
        Check <x>^{4+eps'} |rho| <= C on the validator cloud and flag identically vanishing sources.

        :param form_factor: source to check.
        :param sample_radius: cube half-width, at least the support radius.
        :param tol: relative slack on the envelope constant.
        :return: envelope report.
        """
        weight_power = 4.0 + form_factor.envelope_eps
        if form_factor.point_like:
            return EnvelopeReport(name=form_factor.name, passed=True, max_weighted=0.0,
                                  bound=form_factor.envelope_constant, weight_power=weight_power,
                                  sample_radius=form_factor.support_radius, samples=0,
                                  degenerate=form_factor.amplitude == 0)

        sample_radius = self._sample_radius(form_factor.support_radius, sample_radius, 'validate_form_factor')
        points = sample_cloud(sample_radius, self.cloud_size)
        values = np.abs(form_factor(points))
        if not np.all(np.isfinite(values)):
            raise InvalidFormFactorError(detail=f'{form_factor.name} returned non-finite values on the sample cloud.')

        report = self._report(form_factor.name, points, values, weight_power, form_factor.envelope_constant,
                              sample_radius, tol)
        report.degenerate = bool(np.max(values) == 0)
        if report.degenerate:
            logger.warning('Source %s vanishes on the whole sample cloud.', form_factor.name)
        return report

    def wiener_check(self, form_factor: FormFactor, k_abs: float, dirs: Optional[DirectionGrid] = None,
                     tol: Optional[float] = None) -> WienerReport:
        """
        Minimum of |rho^(|k| theta)| over a direction grid.

        The transform is computed on the source grid and on its refinement; a
        disagreement above the quadrature tolerance is a resolution error.

        :param form_factor: source density.
        :param k_abs: wave number, positive.
        :param dirs: direction grid, defaults to the configured octahedral rule.
        :param tol: pass threshold on the minimum.
        :return: Wiener report.
        """
        if not k_abs > 0:
            raise DomainError(detail='Wiener check needs |k| > 0.', stage='wiener_check')
        dirs = dirs or DirectionGrid.default()
        tol = settings.SCATTERLAB_WIENER_TOL if tol is None else tol

        wave_vectors = k_abs * dirs.points
        values = source_transform(form_factor, wave_vectors)
        refinement_error = 0.0
        if not form_factor.point_like:
            refined = source_transform(form_factor, wave_vectors, spacing=form_factor.resolution / 2.0)
            refinement_error = float(np.max(np.abs(refined - values)))
            allowed = max(tol, settings.SCATTERLAB_QUADRATURE_RTOL * float(np.max(np.abs(refined))))
            if refinement_error > allowed:
                raise ResolutionError(
                    detail=f'Source transform of {form_factor.name} changed by {refinement_error:.3e} '
                           f'under refinement (allowed {allowed:.3e}).',
                    stage='wiener_check',
                )
            values = refined

        minimum = float(np.min(np.abs(values)))
        passed = minimum > tol
        logger.info('Wiener check for %s at |k|=%.4f: min |rho^| = %.4e, passed=%s',
                    form_factor.name, k_abs, minimum, passed)
        return WienerReport(name=form_factor.name, k_abs=k_abs, minimum=minimum, passed=passed, tol=tol,
                            values=values, refinement_error=refinement_error)

    def _sample_radius(self, support: float, requested: Optional[float], stage: str) -> float:
        if requested is None:
            return support
        if requested < support:
            raise DomainError(detail=f'Sample radius {requested} does not cover the support radius {support}.',
                              stage=stage)
        return requested

    def _derivative_magnitudes(self, potential: Potential, points: np.ndarray) -> np.ndarray:
        """Largest of |V|, |d_i V| and |d_i d_j V| per point, by central differences."""
        step = self.step
        center = potential(points)
        magnitudes = [np.abs(center)]
        shifted = {}
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            shifted[axis, 1] = potential(points + offset)
            shifted[axis, -1] = potential(points - offset)
            magnitudes.append(np.abs(shifted[axis, 1] - shifted[axis, -1]) / (2.0 * step))
            second = (shifted[axis, 1] - 2.0 * center + shifted[axis, -1]) / step ** 2
            magnitudes.append(np.abs(second))
        for first in range(3):
            for second in range(first + 1, 3):
                offset_a = np.zeros(3)
                offset_b = np.zeros(3)
                offset_a[first] = step
                offset_b[second] = step
                mixed = (potential(points + offset_a + offset_b) - potential(points + offset_a - offset_b)
                         - potential(points - offset_a + offset_b) + potential(points - offset_a - offset_b))
                magnitudes.append(np.abs(mixed) / (4.0 * step ** 2))
        return np.max(np.stack(magnitudes), axis=0)

    def _report(self, name, points, magnitudes, weight_power, bound, sample_radius, tol) -> EnvelopeReport:
        weighted = japanese_bracket(points) ** weight_power * magnitudes
        worst = int(np.argmax(weighted))
        max_weighted = float(weighted[worst])
        passed = max_weighted <= bound * (1.0 + tol)
        if not passed:
            logger.warning('Envelope of %s violated: max weighted %.4e exceeds C=%.4e at %s',
                           name, max_weighted, bound, points[worst])
        return EnvelopeReport(name=name, passed=passed, max_weighted=max_weighted, bound=bound,
                              weight_power=weight_power, sample_radius=sample_radius, samples=points.shape[0],
                              worst_point=[float(value) for value in points[worst]])
