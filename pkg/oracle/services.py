import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings
from rest_framework.serializers import ValidationError
from scipy import integrate
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from domain.catalog import Potential
from domain.grids import DirectionGrid
from domain.waves import WaveContext
from scatterlab.exceptions import MatchingError, TruncationError
from stationary.services import AmplitudeTable

logger = logging.getLogger(__name__)

RESCALE_LIMIT = 1e100


@dataclass(frozen=True)
class PhaseShiftSet:
    """
    Phase shifts delta_l for l = 0..L_max at one wave number.

    ``truncation`` is |delta_{L_max}|, the size of the first neglected term.
    """
    k_abs: float
    deltas: np.ndarray
    truncation: float

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float).ravel()
        if deltas.size == 0 or not np.all(np.isfinite(deltas)):
            raise ValidationError('Phase shifts must be a nonempty finite real sequence.')
        object.__setattr__(self, 'deltas', deltas)

    @property
    def l_max(self) -> int:
        return self.deltas.size - 1

    def total_cross_section(self) -> float:
        """(4 pi / k^2) sum (2l + 1) sin^2 delta_l."""
        ells = np.arange(self.deltas.size)
        return float(4.0 * np.pi / self.k_abs ** 2 * np.sum((2 * ells + 1) * np.sin(self.deltas) ** 2))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open('w', newline='') as stream:
            writer = csv.writer(stream)
            writer.writerow(['l', 'delta'])
            for ell, delta in enumerate(self.deltas):
                writer.writerow([ell, format(float(delta), '.17g')])
        return path

    def to_dict(self) -> dict:
        return {'k': self.k_abs, 'l_max': self.l_max, 'truncation': self.truncation,
                'deltas': [float(delta) for delta in self.deltas]}


@dataclass
class OracleComparison:
    rms: float
    scale: float
    rtol: float
    passed: bool

    def to_dict(self) -> dict:
        return {'rms': self.rms, 'max_abs_a': self.scale, 'rtol': self.rtol, 'passed': self.passed}


def default_r_max(potential: Potential, k_abs: float) -> float:
    """Three support radii, and at least half a wavelength past the support."""
    return max(3.0 * potential.support_radius, potential.support_radius + np.pi / k_abs)


def radial_grid(r_max: float, dr: float) -> np.ndarray:
    return np.arange(int(np.ceil(r_max / dr)) + 1) * dr


def numerov(coefficient: np.ndarray, dr: float, ell: int) -> np.ndarray:
    """
    Regular solution of u'' = -F u on r_n = n dr with u_0 = 0.

    The scale is arbitrary: u_1 = 1, and the l = 1 origin term (F u)_0 uses the
    matching normalization u ~ (r / dr)^2. Values are rescaled when they exceed
    ``RESCALE_LIMIT``.
    """
    c = dr * dr / 12.0
    weights = 1.0 + c * coefficient
    u = np.zeros(coefficient.size)
    u[1] = 1.0
    origin = -2.0 * c / (dr * dr) if ell == 1 else 0.0
    for n in range(1, coefficient.size - 1):
        back = origin if n == 1 else weights[n - 1] * u[n - 1]
        u[n + 1] = (2.0 * (1.0 - 5.0 * c * coefficient[n]) * u[n] - back) / weights[n + 1]
        if abs(u[n + 1]) > RESCALE_LIMIT:
            u[:n + 2] /= RESCALE_LIMIT
    return u


def _channel_coefficient(potential_values: np.ndarray, radii: np.ndarray, energy_term: float, ell: int) -> np.ndarray:
    coefficient = np.empty_like(radii)
    coefficient[0] = energy_term - 2.0 * potential_values[0] if ell == 0 else 0.0
    coefficient[1:] = energy_term - 2.0 * potential_values[1:] - ell * (ell + 1) / radii[1:] ** 2
    return coefficient


def channel_phase_shift(potential_values: np.ndarray, radii: np.ndarray, k_abs: float, ell: int) -> float:
    """
    delta_l from the ratio of u at two radii beyond the support, matched to
    Riccati-Bessel functions: tan delta = (j1 - K j2) / (n1 - K n2), K = u1 / u2.
    """
    dr = radii[1] - radii[0]
    u = numerov(_channel_coefficient(potential_values, radii, k_abs ** 2, ell), dr, ell)
    outer = radii.size - 1
    inner = outer - max(1, int(round(0.5 * np.pi / k_abs / dr)))
    if u[outer] == 0:
        raise MatchingError(detail=f'Radial solution vanishes at r_max for l={ell}.')
    ratio = u[inner] / u[outer]
    x_inner, x_outer = k_abs * radii[inner], k_abs * radii[outer]
    j_inner, j_outer = x_inner * spherical_jn(ell, x_inner), x_outer * spherical_jn(ell, x_outer)
    n_inner, n_outer = x_inner * spherical_yn(ell, x_inner), x_outer * spherical_yn(ell, x_outer)
    denominator = n_inner - ratio * n_outer
    if not np.isfinite(denominator) or abs(denominator) < 1e-14 * (abs(n_inner) + abs(ratio * n_outer)):
        raise MatchingError(detail=f'Matching Wronskian is degenerate for l={ell}; increase r_max.')
    return float(np.arctan((j_inner - ratio * j_outer) / denominator))


def phase_shifts(potential: Potential, k_abs: float, l_max: Optional[int] = None, r_max: Optional[float] = None,
                 dr: Optional[float] = None, workers: Optional[int] = None) -> PhaseShiftSet:
    """
    Phase shifts of a radial potential by Numerov integration of
    u'' + (k^2 - 2 V(r) - l(l + 1) / r^2) u = 0.

    :param potential: radial potential, negligible beyond ``r_max``.
    :param k_abs: wave number.
    :param l_max: last channel; chosen adaptively when omitted.
    :param r_max: outer matching radius, defaults to three support radii.
    :param dr: Numerov step.
    :param workers: threads over channels.
    :return: phase shifts and truncation estimate.
    """
    if not k_abs > 0:
        raise ValidationError(f'Wave number must be positive, got {k_abs}.')
    if potential.is_zero:
        return PhaseShiftSet(k_abs=k_abs, deltas=np.zeros(1 if l_max is None else l_max + 1), truncation=0.0)
    dr = dr or settings.SCATTERLAB_NUMEROV_DR
    radii = radial_grid(r_max or default_r_max(potential, k_abs), dr)
    values = potential.radial(radii)
    workers = workers or settings.SCATTERLAB_WORKERS

    def channel(ell: int) -> float:
        return channel_phase_shift(values, radii, k_abs, ell)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        if l_max is not None:
            deltas = list(pool.map(channel, range(l_max + 1)))
        else:
            deltas = _adaptive_channels(pool, channel, max(workers, 2))

    truncation = abs(deltas[-1])
    if truncation > settings.SCATTERLAB_PHASE_SHIFT_TOL:
        logger.warning('Phase shifts at |k|=%.3f stop at l=%d with |delta|=%.2e', k_abs, len(deltas) - 1, truncation)
    logger.info('Phase shifts at |k|=%.3f: l_max=%d, delta_0=%.6e', k_abs, len(deltas) - 1, deltas[0])
    return PhaseShiftSet(k_abs=k_abs, deltas=np.array(deltas), truncation=truncation)


def _adaptive_channels(pool, channel, batch: int) -> list:
    """Channels in batches until two consecutive |delta| drop below the tolerance."""
    tol = settings.SCATTERLAB_PHASE_SHIFT_TOL
    limit = settings.SCATTERLAB_MAX_PARTIAL_WAVE
    deltas = []
    while len(deltas) <= limit:
        start = len(deltas)
        deltas.extend(pool.map(channel, range(start, min(start + batch, limit + 1))))
        for ell in range(max(start, 1), len(deltas)):
            if abs(deltas[ell - 1]) < tol and abs(deltas[ell]) < tol:
                return deltas[:ell + 1]
    return deltas


def partial_wave_amplitude(ps: PhaseShiftSet, dirs: DirectionGrid, wave: WaveContext,
                           tol: Optional[float] = None) -> AmplitudeTable:
    """
    a(theta) = (1 / |k|) sum (2l + 1) e^{i delta_l} sin delta_l P_l(cos theta), theta measured from k.

    :raises TruncationError: when the truncation estimate exceeds ``tol``.
    """
    tol = settings.SCATTERLAB_TRUNCATION_TOL if tol is None else tol
    if abs(wave.k_abs - ps.k_abs) > 1e-12 * ps.k_abs:
        raise ValidationError(f'Phase shifts belong to |k|={ps.k_abs}, not {wave.k_abs}.')
    if ps.truncation > tol:
        raise TruncationError(detail=f'Truncation estimate {ps.truncation:.2e} exceeds {tol:.1e}.')
    ells = np.arange(ps.deltas.size)
    cosines = np.clip(dirs.points @ wave.direction, -1.0, 1.0)
    coefficients = (2 * ells + 1) * np.exp(1j * ps.deltas) * np.sin(ps.deltas)
    amplitudes = coefficients @ eval_legendre(ells[:, None], cosines[None, :]) / ps.k_abs
    return AmplitudeTable(dirs=dirs, amplitudes=amplitudes, wave=wave)


def born_phase_shifts(potential: Potential, k_abs: float, l_max: int, r_max: Optional[float] = None) -> np.ndarray:
    """First-order phase shifts -2k int V(r) j_l(kr)^2 r^2 dr."""
    r_max = r_max or default_r_max(potential, k_abs)
    deltas = []
    for ell in range(l_max + 1):
        integrand = lambda r: potential.radial(r) * spherical_jn(ell, k_abs * r) ** 2 * r * r
        value, _ = integrate.quad(integrand, 0.0, r_max, limit=400, epsabs=1e-14, epsrel=1e-12)
        deltas.append(-2.0 * k_abs * value)
    return np.array(deltas)


def zero_energy_nodes(potential: Potential, ell: int, r_max: Optional[float] = None, dr: Optional[float] = None) -> int:
    """
    Nodes of the zero-energy regular solution, including one beyond r_max when
    the free continuation a r^{l+1} + b r^{-l} changes sign there.
    """
    dr = dr or settings.SCATTERLAB_NUMEROV_DR
    radii = radial_grid(r_max or 3.0 * potential.support_radius, dr)
    u = numerov(_channel_coefficient(potential.radial(radii), radii, 0.0, ell), dr, ell)
    signs = np.sign(u[1:])
    nodes = int(np.count_nonzero(signs[1:] * signs[:-1] < 0))

    r, value = radii[-1], u[-1]
    slope = (u[-1] - u[-2]) / dr
    growing = (ell * value / r + slope) / r ** ell
    if growing * value < 0:
        nodes += 1
    return nodes


def bound_state_count(potential: Potential, r_max: Optional[float] = None, dr: Optional[float] = None) -> int:
    """Bound states counted with multiplicity 2l + 1, from zero-energy node counts per channel."""
    if potential.is_zero:
        return 0
    total = 0
    for ell in range(settings.SCATTERLAB_MAX_PARTIAL_WAVE + 1):
        nodes = zero_energy_nodes(potential, ell, r_max, dr)
        if nodes == 0:
            break
        total += (2 * ell + 1) * nodes
    logger.info('Potential %s binds %d states', potential.name, total)
    return total


def compare_amplitudes(reference: AmplitudeTable, candidate: AmplitudeTable,
                       rtol: Optional[float] = None) -> OracleComparison:
    """RMS of |a_reference - a_candidate| over the directions against rtol * max |a_reference|."""
    rtol = settings.SCATTERLAB_ORACLE_RMS_TOL if rtol is None else rtol
    if reference.amplitudes.shape != candidate.amplitudes.shape:
        raise ValidationError('Amplitude tables must share their direction grid.')
    rms = float(np.sqrt(np.mean(np.abs(reference.amplitudes - candidate.amplitudes) ** 2)))
    scale = float(np.max(np.abs(reference.amplitudes)))
    passed = rms <= rtol * scale
    if not passed:
        logger.warning('Amplitude RMS difference %.3e exceeds %.1f%% of %.3e', rms, 100 * rtol, scale)
    return OracleComparison(rms=rms, scale=scale, rtol=rtol, passed=bool(passed))
