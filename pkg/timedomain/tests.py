import csv
import json
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from domain.catalog import build_form_factor, build_potential
from domain.grids import Grid3, ScalarField
from domain.waves import WaveContext
from scatterlab.exceptions import DomainError

from .services import (
    EvolutionState,
    Trajectory,
    continuity_residual,
    discrete_limit_reference,
    evolve,
    extract_limit_amplitude,
    gaussian_packet,
    limit_amplitude_error,
    limit_amplitude_reference,
)
from .utils import absorbing_profile, calibrate_absorber, discrete_wave_number, layer_reflection


def stationary_trajectory(transient: float = 0.0, t_final: float = 100.0) -> Trajectory:
    """Synthetic snapshots (B + transient e^{-t/5}) e^{-iEt} on a small box."""
    grid = Grid3.cube((0.0, 0.0, 0.0), 3.0, 6)
    wave = WaveContext.along(1.0)
    base = np.exp(-np.sum(grid.points() ** 2, axis=1) / 4.0) * (1.0 + 0.5j)
    trajectory = Trajectory(grid=grid, dt=0.01, stride=1, wave=wave, source=np.zeros(grid.size, dtype=complex),
                            potential_values=np.zeros(grid.size), absorber=np.zeros(grid.size))
    step = trajectory.period / 16
    for time in np.arange(0.0, t_final + 0.5 * step, step):
        values = (base + transient * np.exp(-time / 5.0)) * np.exp(-1j * wave.energy * time)
        trajectory.states.append(EvolutionState(psi=ScalarField(grid=grid, values=values), time=float(time)))
    return trajectory


class AbsorberTests(SimpleTestCase):
    def test_profile_vanishes_inside(self) -> None:
        """test W = 0 away from the layer and maximal at the corners"""
        grid = Grid3.cube((0.0, 0.0, 0.0), 5.0, 20)
        profile = absorbing_profile(grid, 2.0, 0.2)
        inner = np.all(np.abs(grid.points()) < 3.0 - 1e-9, axis=1)
        np.testing.assert_array_equal(profile[inner], 0.0)
        self.assertTrue(np.all(profile[~inner] > 0.0))
        self.assertLessEqual(profile.max(), 2.0)
        np.testing.assert_array_equal(absorbing_profile(grid, 0.0, 0.2), 0.0)

    def test_discrete_wave_number(self) -> None:
        """test lattice dispersion and unresolved energies"""
        self.assertAlmostEqual(discrete_wave_number(0.5, 1e-3), 1.0, places=6)
        with self.assertRaises(DomainError):
            discrete_wave_number(10.0, 1.0)

    def test_calibration_beats_extremes(self) -> None:
        """test calibrated strength reflects less than weak or strong layers"""
        calibration = calibrate_absorber(1.0, 0.5, 6.0)
        self.assertLess(calibration.reflection, 0.1)
        self.assertLess(calibration.reflection, layer_reflection(1e-3, 1.0, 0.5, 6.0))
        self.assertLess(calibration.reflection, layer_reflection(1e3, 1.0, 0.5, 6.0))
        self.assertEqual(calibration.to_dict()['thickness'], 6.0)

    def test_calibration_needs_layer(self) -> None:
        """test zero thickness"""
        with self.assertRaises(DomainError):
            calibrate_absorber(1.0, 0.5, 0.0)


class EvolutionTests(SimpleTestCase):
    def setUp(self) -> None:
        self.zero = build_potential('zero_potential')
        self.wave = WaveContext.along(1.0, distance=0.5)
        self.grid = Grid3.cube((0.0, 0.0, 0.0), 3.0, 12)

    def test_zero_source_stays_zero(self) -> None:
        """test undriven zero state"""
        trajectory = evolve(self.zero, None, self.wave, self.grid, t_final=1.0, stride=5)
        for state in trajectory.states:
            np.testing.assert_array_equal(state.psi.values, 0.0)

    def test_unitary_without_absorber(self) -> None:
        """test norm conservation of an undriven packet"""
        packet = gaussian_packet(self.grid, width=1.0, k_vector=(1.0, 0.0, 0.0))
        potential = build_potential('gaussian_well', {'g': -1.0, 'width': 1.0})
        trajectory = evolve(potential, None, self.wave, self.grid, t_final=20 * 0.05, dt=0.05, psi0=packet,
                            stride=1, absorber_strength=0.0)
        norms = np.array([state.norm for state in trajectory.states])
        self.assertEqual(len(norms), 21)
        self.assertAlmostEqual(norms[0], 1.0, places=12)
        self.assertLessEqual(np.max(np.abs(np.diff(norms))), 1e-10)

    def test_linear_in_source(self) -> None:
        """test doubling the source doubles the state"""
        single = build_form_factor('gaussian_source', {'amplitude': 1.0, 'width': 1.0})
        double = build_form_factor('gaussian_source', {'amplitude': 2.0, 'width': 1.0})
        kwargs = {'t_final': 2.0, 'dt': 0.05, 'stride': 10, 'absorber_strength': 1.0, 'absorber_fraction': 0.2}
        first = evolve(self.zero, single, self.wave, self.grid, **kwargs)
        second = evolve(self.zero, double, self.wave, self.grid, **kwargs)
        self.assertGreater(first.states[-1].norm, 0.0)
        np.testing.assert_allclose(second.states[-1].psi.values, 2.0 * first.states[-1].psi.values, rtol=1e-10,
                                   atol=1e-14)

    def test_phase_of_source(self) -> None:
        """test rotating rho by e^{i alpha} rotates the state by the same phase"""
        source = build_form_factor('gaussian_source', {'amplitude': 1.0, 'width': 1.0})
        phase = np.exp(0.7j)
        rotated = replace(source, profile=lambda radii: phase * source.profile(radii))
        kwargs = {'t_final': 2.0, 'dt': 0.05, 'stride': 10, 'absorber_strength': 1.0, 'absorber_fraction': 0.2}
        well = build_potential('gaussian_well', {'g': -0.5, 'width': 1.0})
        first = evolve(well, source, self.wave, self.grid, **kwargs)
        second = evolve(well, rotated, self.wave, self.grid, **kwargs)
        self.assertGreater(first.states[-1].norm, 0.0)
        np.testing.assert_allclose(second.states[-1].psi.values, phase * first.states[-1].psi.values, rtol=1e-10,
                                   atol=1e-14)

    def test_export(self) -> None:
        """test snapshot files and sidecar"""
        source = build_form_factor('point_source')
        trajectory = evolve(self.zero, source, self.wave, self.grid, t_final=0.5, dt=0.05, stride=5,
                            absorber_strength=0.0)
        with tempfile.TemporaryDirectory() as directory:
            sidecar = json.loads(trajectory.export(directory).read_text())
            self.assertEqual(sidecar['files'], ['snapshot_00000.bin', 'snapshot_00001.bin', 'snapshot_00002.bin'])
            self.assertEqual(sidecar['grid']['dims'], [12, 12, 12])
            self.assertEqual((Path(directory) / 'snapshot_00002.bin').stat().st_size, 12 ** 3 * 16)
            self.assertAlmostEqual(sidecar['times'][-1], 0.5)


class ContinuityTests(SimpleTestCase):
    def test_zero_state(self) -> None:
        """test vanishing residual for psi = 0"""
        trajectory = evolve(build_potential('zero_potential'), None, WaveContext.along(1.0), Grid3.cube((0, 0, 0), 2.0, 8),
                            t_final=0.1, dt=0.05, stride=1, absorber_strength=0.0)
        self.assertEqual(continuity_residual(trajectory, 0).max_norm, 0.0)

    def test_residual_shrinks_with_spacing(self) -> None:
        """test second-order decrease of the discrete continuity residual"""
        zero = build_potential('zero_potential')
        wave = WaveContext.along(1.0)
        residuals = []
        for cells in (16, 32):
            grid = Grid3.cube((0.0, 0.0, 0.0), 4.8, cells)
            packet = gaussian_packet(grid, width=1.2, k_vector=(1.0, 0.0, 0.0))
            dt = 0.2 * grid.spacing ** 2
            trajectory = evolve(zero, None, wave, grid, t_final=dt, dt=dt, psi0=packet, stride=1,
                                absorber_strength=0.0)
            residuals.append(continuity_residual(trajectory, 0).max_norm)
        self.assertGreaterEqual(residuals[0] / residuals[1], 3.0)


class LimitAmplitudeTests(SimpleTestCase):
    def setUp(self) -> None:
        self.source = build_form_factor('gaussian_source', {'amplitude': 1.0, 'width': 1.0})
        self.wave = WaveContext.along(1.0, distance=0.5)
        self.grid = Grid3.cube((0.0, 0.0, 0.0), 6.0, 24)

    def test_stationary_snapshots(self) -> None:
        """test exact recovery from a decaying transient"""
        trajectory = stationary_trajectory(transient=0.3)
        estimate = extract_limit_amplitude(trajectory)
        expected = trajectory.states[-1].psi.values * np.exp(1j * trajectory.energy * trajectory.times[-1]) \
            - 0.3 * np.exp(-trajectory.times[-1] / 5.0)
        np.testing.assert_allclose(estimate.field.values, expected, atol=1e-4)
        self.assertTrue(estimate.decreasing)
        self.assertTrue(estimate.converged)
        self.assertEqual(estimate.messages, [])

    def test_window_phase_is_removed(self) -> None:
        """test the estimate does not depend on where the window starts"""
        trajectory = stationary_trajectory()
        late = extract_limit_amplitude(trajectory, window=(60.0, 100.0)).field.values
        early = extract_limit_amplitude(trajectory, window=(20.0, 45.0)).field.values
        np.testing.assert_allclose(late, early, atol=1e-12)

    def test_window_before_crossing(self) -> None:
        """test window opening before the box is crossed"""
        with self.assertRaises(DomainError):
            extract_limit_amplitude(stationary_trajectory(), window=(1.0, 50.0))

    def test_residual_csv(self) -> None:
        """test residual history export"""
        estimate = extract_limit_amplitude(stationary_trajectory(transient=0.3))
        with tempfile.TemporaryDirectory() as directory:
            path = estimate.residuals_to_csv(Path(directory) / 'residuals.csv')
            with path.open() as stream:
                rows = list(csv.reader(stream))
        self.assertEqual(rows[0], ['t', 'r'])
        self.assertEqual(len(rows), len(estimate.times) + 1)

    def test_free_driven_limit(self) -> None:
        """test driven free evolution approaches R0 rho"""
        zero = build_potential('zero_potential')
        trajectory = evolve(zero, self.source, self.wave, self.grid, t_final=80.0, absorber_fraction=0.3)
        estimate = extract_limit_amplitude(trajectory)
        mask = trajectory.physical_interior()
        self.assertLess(limit_amplitude_error(estimate, discrete_limit_reference(trajectory), mask=mask), 0.05)
        self.assertLess(limit_amplitude_error(estimate, limit_amplitude_reference(trajectory, zero), mask=mask), 0.25)

    def test_driven_well_limit(self) -> None:
        """test driven evolution in a weak well approaches the stationary solution"""
        well = build_potential('gaussian_well', {'g': -0.5, 'width': 1.0})
        trajectory = evolve(well, self.source, self.wave, self.grid, t_final=80.0, absorber_fraction=0.3)
        estimate = extract_limit_amplitude(trajectory)
        mask = trajectory.physical_interior()
        discrete = discrete_limit_reference(trajectory)
        self.assertLess(limit_amplitude_error(estimate, discrete, mask=mask), 0.05)
        self.assertLess(limit_amplitude_error(estimate, limit_amplitude_reference(trajectory, well), mask=mask), 0.25)
        free = replace(trajectory, potential_values=np.zeros(self.grid.size))
        self.assertGreater(limit_amplitude_error(estimate, discrete_limit_reference(free), mask=mask), 0.05)

    def test_initial_state_is_forgotten(self) -> None:
        """test a moving packet at t = 0 leaves the limit unchanged"""
        zero = build_potential('zero_potential')
        packet = gaussian_packet(self.grid, width=1.0, k_vector=(1.5, 0.0, 0.0))
        trajectory = evolve(zero, self.source, self.wave, self.grid, t_final=80.0, psi0=packet, absorber_fraction=0.3)
        self.assertGreater(trajectory.states[0].norm, 0.99)
        estimate = extract_limit_amplitude(trajectory)
        reference = discrete_limit_reference(trajectory)
        self.assertLess(limit_amplitude_error(estimate, reference, mask=trajectory.physical_interior()), 0.05)
