import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from rest_framework.serializers import ValidationError

from domain.catalog import build_form_factor, build_potential
from domain.grids import DirectionGrid, Grid3, ScalarField
from domain.waves import WaveContext
from scatterlab.exceptions import DegenerateSourceError, DomainError
from stationary.services import AmplitudeTable, LippmannSchwingerSolver, amplitude

from .services import (
    angular_scattered_density,
    cross_section,
    far_field_flux_profile,
    flux_convergence_in_distance,
    flux_field,
    incident_flux_magnitude,
    surface_flux,
)
from .surfaces import SurfacePatch


def plane_wave_field(k_vector, half_width: float = 1.0, cells: int = 20) -> ScalarField:
    grid = Grid3.cube((0.0, 0.0, 0.0), half_width, cells)
    return ScalarField.from_function(grid, lambda points: np.exp(1j * points @ np.asarray(k_vector, dtype=float)))


class FluxFieldTests(SimpleTestCase):
    def test_plane_wave_current(self) -> None:
        """test e^{ik.x} carries j = k in the interior"""
        field = flux_field(plane_wave_field((1.0, 0.0, 0.0)))
        interior = field.components[:, 1:-1, 1:-1, 1:-1]
        np.testing.assert_allclose(interior[0], 1.0, atol=2e-3)
        np.testing.assert_allclose(interior[1:], 0.0, atol=1e-14)
        np.testing.assert_allclose(field.divergence()[2:-2, 2:-2, 2:-2], 0.0, atol=1e-10)

    def test_real_field_has_no_current(self) -> None:
        """test real psi gives j = 0"""
        grid = Grid3.cube((0.0, 0.0, 0.0), 1.0, 6)
        field = flux_field(ScalarField.from_function(grid, lambda points: np.exp(-np.sum(points ** 2, axis=1))))
        np.testing.assert_array_equal(field.components, 0.0)

    def test_phase_and_scaling(self) -> None:
        """test global phase invariance and quadratic scaling"""
        psi = plane_wave_field((0.3, -0.7, 0.5), cells=8)
        base = flux_field(psi).components
        np.testing.assert_allclose(flux_field(psi.scaled(np.exp(0.9j))).components, base, atol=1e-14)
        np.testing.assert_allclose(flux_field(psi.scaled(2.0 - 1.0j)).components, 5.0 * base, rtol=1e-12,
                                   atol=1e-14)

    def test_outgoing_spherical_wave(self) -> None:
        """test e^{i|k|r}/r has radial current |k|/r^2"""
        grid = Grid3.cube((5.0, 0.0, 0.0), 0.5, 21)
        psi = ScalarField.from_function(
            grid, lambda points: np.exp(1j * np.linalg.norm(points, axis=1)) / np.linalg.norm(points, axis=1))
        field = flux_field(psi)
        self.assertAlmostEqual(field.components[0, 10, 10, 10] * 25.0, 1.0, delta=2e-3)

    def test_too_few_cells(self) -> None:
        """test two cells per axis"""
        with self.assertRaises(DomainError):
            flux_field(ScalarField.zeros(Grid3.cube((0, 0, 0), 1.0, 2)))

    def test_save(self) -> None:
        """test flat binary export size"""
        field = flux_field(plane_wave_field((1.0, 0.0, 0.0), cells=4))
        with tempfile.TemporaryDirectory() as directory:
            path = field.save(Path(directory) / 'flux.bin')
            self.assertEqual(path.stat().st_size, 64 * 3 * 8)


class SurfaceFluxTests(SimpleTestCase):
    def test_areas(self) -> None:
        """test sphere and disk areas"""
        self.assertAlmostEqual(SurfacePatch.sphere(radius=2.0).total_area, 16 * np.pi, places=10)
        self.assertAlmostEqual(SurfacePatch.disk(radius=1.5).total_area, 2.25 * np.pi, places=10)

    def test_disk_flux_of_plane_wave(self) -> None:
        """test unit disk across e^{iz} carries pi"""
        field = flux_field(plane_wave_field((0.0, 0.0, 1.0), half_width=1.5, cells=30))
        value = surface_flux(field, SurfacePatch.disk(radius=1.0))
        self.assertAlmostEqual(value / np.pi, 1.0, delta=3e-3)

    def test_closed_sphere_without_sources(self) -> None:
        """test net flux of a constant current through a sphere"""
        field = flux_field(plane_wave_field((0.6, 0.0, 0.8), half_width=1.5, cells=30))
        self.assertAlmostEqual(surface_flux(field, SurfacePatch.sphere(radius=1.0, refinement=2)), 0.0, places=10)

    def test_coarse_sphere_rejected(self) -> None:
        """test bare icosahedron misses too much of the sphere"""
        with self.assertRaises(ValidationError):
            SurfacePatch.sphere(refinement=0)
        self.assertAlmostEqual(SurfacePatch.sphere(refinement=2).total_area, 4 * np.pi, places=10)

    def test_patch_outside_grid(self) -> None:
        """test sphere leaving the grid"""
        field = flux_field(plane_wave_field((1.0, 0.0, 0.0)))
        with self.assertRaises(DomainError):
            surface_flux(field, SurfacePatch.sphere(radius=2.0))


class CrossSectionTests(SimpleTestCase):
    def setUp(self) -> None:
        self.dirs = DirectionGrid.octahedral(6)
        self.table = AmplitudeTable(dirs=self.dirs, amplitudes=np.array([0.5, 0.5j, -0.2, 0.1 + 0.3j, 0.0, 1.0]),
                                    wave=WaveContext.along(2.0))

    def test_angular_density(self) -> None:
        """test |b|^2 |a|^2 |k|"""
        density = angular_scattered_density(self.table, b_abs=1.0)
        self.assertAlmostEqual(density[0], 0.5)
        np.testing.assert_array_equal(angular_scattered_density(
            AmplitudeTable(dirs=self.dirs, amplitudes=np.zeros(6), wave=self.table.wave)), 0.0)

    def test_cross_section_is_amplitude_squared(self) -> None:
        """test sigma = |a|^2 from the same table"""
        b_abs = 0.37
        table = cross_section(angular_scattered_density(self.table, b_abs), incident_flux_magnitude(b_abs, 2.0),
                              self.dirs)
        np.testing.assert_allclose(table.sigma, self.table.cross_section, rtol=1e-14)

    def test_zero_incident_flux(self) -> None:
        """test vanishing incident flux"""
        with self.assertRaises(DegenerateSourceError):
            cross_section(np.ones(6), 0.0, self.dirs)


class ScatteredFluxTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.potential = build_potential('gaussian_well', {'g': -1.0, 'width': 1.0}, support_tol=1e-6)
        cls.wave = WaveContext.along(1.0)
        cls.solver = LippmannSchwingerSolver(cls.potential, cls.potential.grid(0.75), cls.wave.energy)

    def test_far_field_flux_matches_cross_section(self) -> None:
        """test R^2 j.theta / |k| tends to sigma"""
        solution = self.solver.plane(self.wave)
        radii = self.potential.support_radius * np.array([50.0, 100.0, 200.0])
        profile = far_field_flux_profile(solution, DirectionGrid.octahedral(26), radii)
        self.assertLessEqual(profile.deviations[0], 0.05)
        self.assertLessEqual(profile.slope, -0.7)
        self.assertTrue(profile.passed)
        self.assertEqual(len(profile.sigma), 26)

    def test_zero_scattering_is_exact(self) -> None:
        """test V = 0 has no scattered flux"""
        zero = build_potential('zero_potential')
        solver = LippmannSchwingerSolver(zero, zero.grid(0.5), self.wave.energy)
        profile = far_field_flux_profile(solver.plane(self.wave), DirectionGrid.octahedral(6), [20.0, 40.0])
        self.assertTrue(profile.exact)
        np.testing.assert_array_equal(amplitude(solver.plane(self.wave), DirectionGrid.octahedral(6)).amplitudes, 0)

    def test_surface_flux_converges_in_distance(self) -> None:
        """test flux of j_D / |b_D|^2 approaches the plane-wave flux"""
        report = flux_convergence_in_distance(self.solver, build_form_factor('point_source'), self.wave,
                                              [50.0, 100.0, 200.0], SurfacePatch.disk(radius=1.0))
        self.assertTrue(report.decreasing)
        self.assertLess(report.differences[-1], 0.5 * report.differences[0])
