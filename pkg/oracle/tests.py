import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from rest_framework.serializers import ValidationError

from domain.catalog import build_potential
from domain.grids import DirectionGrid
from domain.waves import WaveContext
from scatterlab.exceptions import TruncationError
from stationary.services import LippmannSchwingerSolver, amplitude

from .services import (
    PhaseShiftSet,
    born_phase_shifts,
    bound_state_count,
    compare_amplitudes,
    partial_wave_amplitude,
    phase_shifts,
)


def gaussian_well(g: float):
    return build_potential('gaussian_well', {'g': g, 'width': 1.0}, support_tol=1e-6)


class PhaseShiftTests(SimpleTestCase):
    def test_zero_potential(self) -> None:
        """test V = 0 has no phase shifts and no amplitude"""
        shifts = phase_shifts(build_potential('zero_potential'), 1.0)
        np.testing.assert_array_equal(shifts.deltas, 0.0)
        table = partial_wave_amplitude(shifts, DirectionGrid.octahedral(26), WaveContext.along(1.0))
        np.testing.assert_array_equal(table.amplitudes, 0.0)

    def test_weak_well_matches_born(self) -> None:
        """test weak attraction against first-order phase shifts"""
        potential = gaussian_well(-0.01)
        shifts = phase_shifts(potential, 1.0, l_max=3)
        born = born_phase_shifts(potential, 1.0, l_max=3)
        self.assertTrue(np.all(shifts.deltas[:2] > 0))
        np.testing.assert_allclose(shifts.deltas[:2], born[:2], rtol=0.1)

    def test_adaptive_truncation(self) -> None:
        """test adaptive channels stop below the tolerance"""
        shifts = phase_shifts(gaussian_well(-1.0), 1.0)
        self.assertLess(shifts.truncation, 1e-8)
        self.assertLess(shifts.l_max, 40)
        self.assertGreater(abs(shifts.deltas[0]), 0.1)

    def test_numerov_is_fourth_order(self) -> None:
        """test halving dr reduces the s-wave error about sixteenfold"""
        potential = gaussian_well(-1.0)
        deltas = [phase_shifts(potential, 1.0, l_max=0, r_max=12.0, dr=dr).deltas[0] for dr in (0.04, 0.02, 0.01)]
        ratio = (deltas[0] - deltas[1]) / (deltas[1] - deltas[2])
        self.assertGreaterEqual(ratio, 12.0)
        self.assertLessEqual(ratio, 20.0)

    def test_csv(self) -> None:
        """test (l, delta) export"""
        shifts = PhaseShiftSet(k_abs=1.0, deltas=[0.25, -0.125], truncation=0.0)
        with tempfile.TemporaryDirectory() as directory:
            with shifts.to_csv(Path(directory) / 'phases.csv').open() as stream:
                rows = list(csv.reader(stream))
        self.assertEqual(rows, [['l', 'delta'], ['0', '0.25'], ['1', '-0.125']])


class PartialWaveAmplitudeTests(SimpleTestCase):
    def setUp(self) -> None:
        self.wave = WaveContext.along(1.5, direction=(1.0, 1.0, 0.0))
        self.sphere = DirectionGrid.octahedral(110)

    def test_s_wave_total_cross_section(self) -> None:
        """test sigma_tot = 4 pi sin^2 delta_0 / k^2"""
        shifts = PhaseShiftSet(k_abs=1.5, deltas=[0.3], truncation=0.0)
        table = partial_wave_amplitude(shifts, self.sphere, self.wave)
        expected = 4.0 * np.pi * np.sin(0.3) ** 2 / 1.5 ** 2
        self.assertAlmostEqual(table.total_cross_section(), expected, places=12)
        self.assertAlmostEqual(shifts.total_cross_section(), expected, places=12)

    def test_optical_theorem_is_exact(self) -> None:
        """test Im a(forward) = k sigma_tot / 4 pi for l <= 4"""
        shifts = PhaseShiftSet(k_abs=1.5, deltas=[0.5, -0.3, 0.2, 0.1, 0.05], truncation=0.0)
        forward = partial_wave_amplitude(shifts, DirectionGrid.single(self.wave.direction), self.wave).amplitudes[0]
        total = partial_wave_amplitude(shifts, self.sphere, self.wave).total_cross_section()
        self.assertAlmostEqual(forward.imag, 1.5 * total / (4.0 * np.pi), places=12)
        self.assertAlmostEqual(total, shifts.total_cross_section(), places=12)

    def test_truncation_too_coarse(self) -> None:
        """test large last phase shift"""
        shifts = PhaseShiftSet(k_abs=1.5, deltas=[0.5, 0.1], truncation=0.1)
        with self.assertRaises(TruncationError):
            partial_wave_amplitude(shifts, self.sphere, self.wave)

    def test_wave_number_mismatch(self) -> None:
        """test phase shifts used at another |k|"""
        shifts = PhaseShiftSet(k_abs=1.0, deltas=[0.5], truncation=0.0)
        with self.assertRaises(ValidationError):
            partial_wave_amplitude(shifts, self.sphere, self.wave)


class BoundStateTests(SimpleTestCase):
    def test_counts(self) -> None:
        """test shallow, deep and absent wells"""
        self.assertEqual(bound_state_count(build_potential('zero_potential')), 0)
        self.assertEqual(bound_state_count(gaussian_well(-1.0)), 0)
        self.assertGreaterEqual(bound_state_count(gaussian_well(-5.0)), 1)


class NystromAgreementTests(SimpleTestCase):
    def test_gaussian_well(self) -> None:
        """test partial-wave and grid amplitudes agree within 1% at |k| = 0.5, 1, 2"""
        potential = gaussian_well(-1.0)
        grid = potential.grid(0.4)
        dirs = DirectionGrid.octahedral(26)
        for k_abs in (0.5, 1.0, 2.0):
            wave = WaveContext.along(k_abs)
            oracle = partial_wave_amplitude(phase_shifts(potential, wave.k_abs), dirs, wave)
            grid_table = amplitude(LippmannSchwingerSolver(potential, grid, wave.energy).plane(wave), dirs)
            report = compare_amplitudes(oracle, grid_table, rtol=0.01)
            self.assertTrue(report.passed, report.to_dict())
