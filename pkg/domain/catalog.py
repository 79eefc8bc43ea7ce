"""
Built-in potentials and source form factors.

Experiments refer to entries by name and parameters only; every entry is a
closed-form radial profile declared together with a decreasing bound on its
magnitude, which fixes the support radius, and a closed-form envelope constant.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from django.conf import settings
from rest_framework.exceptions import NotFound
from rest_framework.serializers import ValidationError
from scipy import optimize

from .grids import Grid3, ScalarField

logger = logging.getLogger(__name__)

PEAK_SAMPLES = 20001


@dataclass(frozen=True)
class ParameterRange:
    minimum: float
    maximum: float
    default: float
    description: str = ''

    def to_dict(self) -> dict:
        return {'min': self.minimum, 'max': self.maximum, 'default': self.default, 'description': self.description}


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    kind: str
    description: str
    parameters: dict
    profile_factory: Callable
    tail_factory: Optional[Callable] = None
    envelope_factory: Optional[Callable] = None
    point_like: bool = False

    def resolve_parameters(self, given: Optional[dict] = None) -> dict:
        """
        Fill defaults and check every parameter against its documented range.

        :param given: parameters from the experiment configuration.
        :return: complete parameter dict.
        """
        given = dict(given or {})
        unknown = sorted(set(given) - set(self.parameters))
        if unknown:
            raise ValidationError({self.name: f'Unknown parameters: {", ".join(unknown)}.'})
        resolved = {}
        for name, allowed in self.parameters.items():
            value = float(given.get(name, allowed.default))
            if not allowed.minimum <= value <= allowed.maximum:
                raise ValidationError({
                    name: f'{self.name}.{name}={value} outside [{allowed.minimum}, {allowed.maximum}].'
                })
            resolved[name] = value
        return resolved

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'kind': self.kind,
            'description': self.description,
            'parameters': {name: allowed.to_dict() for name, allowed in sorted(self.parameters.items())},
        }


@dataclass(frozen=True)
class Potential:
    """Real radial potential V(x) = profile(|x|) with numerical support and H3 envelope data."""
    name: str
    profile: Callable
    support_radius: float
    envelope_constant: float
    envelope_eps: float
    parameters: dict = field(default_factory=dict)

    def __call__(self, points) -> np.ndarray:
        radii = np.linalg.norm(np.atleast_2d(points), axis=-1)
        return np.asarray(self.profile(radii), dtype=float)

    def radial(self, radii) -> np.ndarray:
        return np.asarray(self.profile(np.asarray(radii, dtype=float)), dtype=float)

    @property
    def is_zero(self) -> bool:
        return self.envelope_constant == 0.0

    @property
    def support_box(self) -> tuple:
        return -self.support_radius * np.ones(3), self.support_radius * np.ones(3)

    def grid(self, spacing: float) -> Grid3:
        lower, upper = self.support_box
        return Grid3.covering(lower, upper, spacing)

    def field(self, grid: Grid3) -> ScalarField:
        return ScalarField.from_function(grid, self)

    def scaled(self, factor: float) -> 'Potential':
        """The potential ``factor * V``; the envelope constant scales with ``|factor|``."""
        profile = self.profile
        return replace(
            self,
            profile=lambda radii: factor * profile(radii),
            envelope_constant=abs(factor) * self.envelope_constant,
            parameters={**self.parameters, 'scale': factor},
        )

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'parameters': self.parameters,
            'support_radius': self.support_radius,
            'envelope_constant': self.envelope_constant,
            'envelope_eps': self.envelope_eps,
        }


@dataclass(frozen=True)
class FormFactor:
    """
    Source density rho(x) = profile(|x|).

    Point-like sources carry no profile; their density is a single cell of
    integral ``amplitude`` and spacing ``resolution``.
    """
    name: str
    profile: Optional[Callable]
    support_radius: float
    envelope_constant: float
    envelope_eps: float
    resolution: float
    point_like: bool = False
    parameters: dict = field(default_factory=dict)

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.point_like:
            return np.zeros(points.shape[0], dtype=complex)
        return np.asarray(self.profile(np.linalg.norm(points, axis=-1)), dtype=complex)

    @property
    def amplitude(self) -> float:
        return self.parameters.get('amplitude', 1.0)

    @property
    def is_zero(self) -> bool:
        return self.envelope_constant == 0.0 and not (self.point_like and self.amplitude != 0)

    def density(self, center=(0.0, 0.0, 0.0), spacing: Optional[float] = None) -> ScalarField:
        """
        Sample the source translated to ``center`` on a grid covering its support.

        :param center: translation of the source.
        :param spacing: grid spacing, defaults to the entry's resolution.
        :return: density field.
        """
        spacing = spacing or self.resolution
        center = np.asarray(center, dtype=float)
        if self.point_like:
            grid = Grid3.cube(center, 1.5 * spacing, 3)
            return ScalarField.point_like(grid, center, total=self.amplitude)
        grid = Grid3.covering(center - self.support_radius, center + self.support_radius, spacing)
        return ScalarField.from_function(grid, lambda points: self(points - center))

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'parameters': self.parameters,
            'support_radius': self.support_radius,
            'envelope_constant': self.envelope_constant,
            'envelope_eps': self.envelope_eps,
            'resolution': self.resolution,
            'point_like': self.point_like,
        }


def support_radius(tail: Callable, peak: float, tol: float, max_radius: float) -> float:
    """
    Radius where the decreasing closed-form ``tail`` bound drops to ``tol * peak``, found by bisection.

    Bounds that never drop below the threshold are capped at ``max_radius``.
    """
    if peak == 0:
        return 1.0
    threshold = tol * peak
    if tail(max_radius) >= threshold:
        logger.warning('Profile does not decay below %.1e of its peak within r=%.1f; support capped.',
                       tol, max_radius)
        return float(max_radius)
    radius = optimize.bisect(lambda r: tail(r) - threshold, 0.0, max_radius, xtol=1e-10)
    return float(max(radius, 0.5))


def profile_peak(profile: Callable, max_radius: float) -> float:
    radii = np.linspace(0.0, max_radius, PEAK_SAMPLES)
    return float(np.max(np.abs(profile(radii))))


def bracket_supremum(power: float, rate: float) -> float:
    """sup over u >= 1 of u^power e^{-rate (u - 1)}, in closed form."""
    peak = max(power / rate, 1.0)
    return float(np.exp(power * np.log(peak) - rate * (peak - 1.0)))


def _zero_profile():
    return lambda radii: np.zeros_like(np.asarray(radii, dtype=float))


def _gaussian_well(g, width):
    return lambda radii: g * np.exp(-(np.asarray(radii) / width) ** 2)


def _gaussian_well_tail(g, width):
    return lambda r: abs(g) * np.exp(-(r / width) ** 2)


def _gaussian_well_envelope(weight_power, g, width):
    # |f|, |f'|, |f''| + |f'|/r <= |g| (1 + r^2)(1 + 5/w^2 + 4/w^4) e^{-r^2/w^2}
    factor = 1.0 + 5.0 / width ** 2 + 4.0 / width ** 4
    return abs(g) * factor * bracket_supremum(weight_power / 2.0 + 1.0, 1.0 / width ** 2)


def _yukawa_regularized(g, mu, core):
    """
    g (e^{-mu r} - e^{-nu r} - alpha r e^{-nu r}) / r with nu = 1/core.

    alpha cancels the linear term at the origin, which makes the profile C^2 in three dimensions.
    """
    nu = _yukawa_nu(mu, core)
    alpha = (nu * nu - mu * mu) / (2.0 * nu)
    origin_value = nu - mu - alpha

    def profile(radii):
        radii = np.asarray(radii, dtype=float)
        safe = np.where(radii > 0, radii, 1.0)
        values = (np.expm1(-mu * safe) - np.expm1(-nu * safe) - alpha * safe * np.exp(-nu * safe)) / safe
        return g * np.where(radii > 0, values, origin_value)

    return profile


def _yukawa_nu(mu, core):
    nu = 1.0 / core
    if nu <= mu:
        raise ValidationError({'core': f'core must be smaller than 1/mu={1.0 / mu:g}.'})
    return nu


def _yukawa_tail(g, mu, core):
    nu = _yukawa_nu(mu, core)
    alpha = (nu * nu - mu * mu) / (2.0 * nu)
    return lambda r: abs(g) * (np.exp(-mu * r) / r + alpha * np.exp(-nu * r)) if r > 0 else np.inf


def _yukawa_envelope(weight_power, g, mu, core):
    # V/g = int_mu^nu e^{-tr} dt - alpha e^{-nu r}, so |d^n V| <= |g| (nu - mu + alpha) nu^n e^{-mu r};
    # V'(0) = 0 bounds |V'|/r by the same with an extra e^{mu}
    nu = _yukawa_nu(mu, core)
    alpha = (nu * nu - mu * mu) / (2.0 * nu)
    scale = abs(g) * (nu - mu + alpha) * max(1.0, nu) ** 2 * (1.0 + np.exp(mu))
    return scale * bracket_supremum(weight_power, mu)


def _lorentzian_tail(g):
    return lambda radii: g / (1.0 + np.asarray(radii) ** 2)


def _lorentzian_bound(g):
    return lambda r: abs(g) / (1.0 + r * r)


def _lorentzian_envelope(weight_power, g):
    # unweighted bound only; the weighted supremum is infinite
    return 8.0 * abs(g)


def _gaussian_source(amplitude, width):
    return lambda radii: amplitude * np.exp(-(np.asarray(radii) / width) ** 2)


def _gaussian_source_tail(amplitude, width):
    return lambda r: abs(amplitude) * np.exp(-(r / width) ** 2)


def _gaussian_source_envelope(weight_power, amplitude, width):
    return abs(amplitude) * bracket_supremum(weight_power / 2.0, 1.0 / width ** 2)


def _shell_source(amplitude, radius, width):
    return lambda radii: amplitude * np.exp(-((np.asarray(radii) - radius) / width) ** 2)


def _shell_tail(amplitude, radius, width):
    return lambda r: abs(amplitude) * np.exp(-(max(r - radius, 0.0) / width) ** 2)


def _shell_envelope(weight_power, amplitude, radius, width):
    # <r>^p <= (1 + radius + d)^p with d = |r - radius|; maximize over d >= 0
    offset = 1.0 + radius
    distance = 0.5 * (-offset + np.sqrt(offset * offset + 2.0 * weight_power * width * width))
    return float(abs(amplitude) * (offset + distance) ** weight_power * np.exp(-(distance / width) ** 2))


def _power_law_source(amplitude, power):
    return lambda radii: amplitude * (1.0 + np.asarray(radii) ** 2) ** (-power / 2.0)


def _power_law_tail(amplitude, power):
    return lambda r: abs(amplitude) * (1.0 + r * r) ** (-power / 2.0)


def _power_law_envelope(weight_power, amplitude, power):
    # exact when power >= weight_power, otherwise the weighted profile is unbounded
    return abs(amplitude)


CATALOG = {
    entry.name: entry for entry in (
        CatalogEntry(
            name='zero_potential',
            kind='potential',
            description='V = 0.',
            parameters={},
            profile_factory=_zero_profile,
            envelope_factory=lambda weight_power: 0.0,
        ),
        CatalogEntry(
            name='gaussian_well',
            kind='potential',
            description='V = g exp(-r^2 / width^2).',
            parameters={
                'g': ParameterRange(-10.0, 10.0, -1.0, 'depth, negative is attractive'),
                'width': ParameterRange(0.2, 5.0, 1.0, 'Gaussian width'),
            },
            profile_factory=_gaussian_well,
            tail_factory=_gaussian_well_tail,
            envelope_factory=_gaussian_well_envelope,
        ),
        CatalogEntry(
            name='yukawa_regularized',
            kind='potential',
            description='Yukawa g e^{-mu r}/r with a C^2 core of size core.',
            parameters={
                'g': ParameterRange(-1.0, 1.0, 0.01, 'coupling'),
                'mu': ParameterRange(0.2, 5.0, 1.0, 'inverse range'),
                'core': ParameterRange(0.05, 2.0, 0.5, 'core radius, below 1/mu'),
            },
            profile_factory=_yukawa_regularized,
            tail_factory=_yukawa_tail,
            envelope_factory=_yukawa_envelope,
        ),
        CatalogEntry(
            name='lorentzian_tail',
            kind='potential',
            description='V = g / (1 + r^2); decays too slowly for the envelope hypothesis.',
            parameters={'g': ParameterRange(-10.0, 10.0, 1.0, 'strength')},
            profile_factory=_lorentzian_tail,
            tail_factory=_lorentzian_bound,
            envelope_factory=_lorentzian_envelope,
        ),
        CatalogEntry(
            name='gaussian_source',
            kind='source',
            description='rho = amplitude exp(-r^2 / width^2).',
            parameters={
                'amplitude': ParameterRange(0.0, 1000.0, 1.0, 'peak density'),
                'width': ParameterRange(0.2, 5.0, 1.0, 'Gaussian width'),
            },
            profile_factory=_gaussian_source,
            tail_factory=_gaussian_source_tail,
            envelope_factory=_gaussian_source_envelope,
        ),
        CatalogEntry(
            name='point_source',
            kind='source',
            description='Single-cell source with integral amplitude.',
            parameters={'amplitude': ParameterRange(0.0, 1000.0, 1.0, 'total source strength')},
            profile_factory=None,
            point_like=True,
        ),
        CatalogEntry(
            name='shell_source',
            kind='source',
            description='rho = amplitude exp(-(r - radius)^2 / width^2); its transform has zeros.',
            parameters={
                'amplitude': ParameterRange(0.0, 1000.0, 1.0, 'peak density'),
                'radius': ParameterRange(0.5, 10.0, 2.0, 'shell radius'),
                'width': ParameterRange(0.1, 2.0, 0.5, 'shell thickness'),
            },
            profile_factory=_shell_source,
            tail_factory=_shell_tail,
            envelope_factory=_shell_envelope,
        ),
        CatalogEntry(
            name='power_law_source',
            kind='source',
            description='rho = amplitude <r>^-power; fails the source envelope for power <= 4.',
            parameters={
                'amplitude': ParameterRange(0.0, 1000.0, 1.0, 'peak density'),
                'power': ParameterRange(1.0, 10.0, 3.0, 'decay power'),
            },
            profile_factory=_power_law_source,
            tail_factory=_power_law_tail,
            envelope_factory=_power_law_envelope,
        ),
    )
}


def get_entry(name: str, kind: Optional[str] = None) -> CatalogEntry:
    entry = CATALOG.get(name)
    if entry is None or (kind is not None and entry.kind != kind):
        raise NotFound(f'No {kind or "catalog"} entry named {name!r}.')
    return entry


def build_potential(name: str, parameters: Optional[dict] = None, support_tol: Optional[float] = None) -> Potential:
    """
    Build a catalog potential.

    :param name: catalog name.
    :param parameters: entry parameters; missing ones take their defaults.
    :param support_tol: relative threshold defining the support radius.
    :return: potential with support radius and declared envelope constant.
    """
    entry = get_entry(name, kind='potential')
    resolved = entry.resolve_parameters(parameters)
    profile = entry.profile_factory(**resolved)
    eps = settings.SCATTERLAB_ENVELOPE_EPS
    radius = _entry_support(entry, profile, resolved, support_tol or settings.SCATTERLAB_SUPPORT_TOL)
    constant = float(entry.envelope_factory(5.0 + eps, **resolved))
    logger.info('Built potential %s %s: support radius %.3f, envelope constant %.4g', name, resolved, radius, constant)
    return Potential(name=name, profile=profile, support_radius=radius, envelope_constant=constant,
                     envelope_eps=eps, parameters=resolved)


def build_form_factor(name: str, parameters: Optional[dict] = None, resolution: Optional[float] = None) -> FormFactor:
    """
    Build a catalog source.

    :param name: catalog name.
    :param parameters: entry parameters; missing ones take their defaults.
    :param resolution: quadrature spacing; defaults to a quarter of the narrowest profile scale.
    :return: form factor with support radius and declared envelope constant.
    """
    entry = get_entry(name, kind='source')
    resolved = entry.resolve_parameters(parameters)
    eps = settings.SCATTERLAB_ENVELOPE_EPS
    if entry.point_like:
        resolution = resolution or 0.1
        return FormFactor(name=name, profile=None, support_radius=1.5 * resolution, envelope_constant=0.0,
                          envelope_eps=eps, resolution=resolution, point_like=True, parameters=resolved)

    profile = entry.profile_factory(**resolved)
    resolution = resolution or 0.25 * resolved.get('width', 1.0)
    radius = _entry_support(entry, profile, resolved, settings.SCATTERLAB_SUPPORT_TOL)
    constant = float(entry.envelope_factory(4.0 + eps, **resolved))
    logger.info('Built source %s %s: support radius %.3f, envelope constant %.4g', name, resolved, radius, constant)
    return FormFactor(name=name, profile=profile, support_radius=radius, envelope_constant=constant,
                      envelope_eps=eps, resolution=resolution, parameters=resolved)


def _entry_support(entry: CatalogEntry, profile: Callable, resolved: dict, tol: float) -> float:
    if entry.tail_factory is None:
        return 1.0
    max_radius = settings.SCATTERLAB_MAX_SUPPORT_RADIUS
    return support_radius(entry.tail_factory(**resolved), profile_peak(profile, max_radius), tol, max_radius)


def describe(filter_text: str = '') -> list:
    """
    Sorted listing of catalog entries whose name contains ``filter_text``.

    :raises NotFound: when nothing matches a non-empty filter.
    """
    entries = [entry.to_dict() for name, entry in sorted(CATALOG.items()) if filter_text.lower() in name]
    if not entries:
        raise NotFound(f'No catalog entry matches {filter_text!r}.')
    return entries
