import csv
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from domain.catalog import build_form_factor, build_potential
from domain.grids import DirectionGrid
from domain.services import radial_transform
from domain.waves import WaveContext
from scatterlab.exceptions import DegenerateSourceError, DomainError, GeometryError

from .services import (
    IncidentWave,
    LippmannSchwingerSolver,
    amplitude,
    born_amplitude,
    convergence_study,
    evaluate_field,
    normalization_bD,
    optical_theorem_check,
    solve_plane,
    t_matrix,
    yukawa_born_amplitude,
)


def gaussian_well(g: float = -1.0):
    return build_potential('gaussian_well', {'g': g, 'width': 1.0}, support_tol=1e-6)


class ZeroPotentialTests(SimpleTestCase):
    def test_plane_identity(self) -> None:
        """test V = 0 returns the incident plane wave"""
        potential = build_potential('zero_potential')
        wave = WaveContext.along(1.0)
        grid = potential.grid(0.5)
        solution = solve_plane(potential, wave, grid)
        np.testing.assert_array_equal(solution.field.flat, wave.plane_wave(grid.points()))
        self.assertLessEqual(solution.residual, 1e-12)
        self.assertEqual(solution.stats.method, 'identity')
        table = amplitude(solution, DirectionGrid.octahedral(26))
        np.testing.assert_array_equal(table.cross_section, 0.0)

    def test_grid_must_cover_support(self) -> None:
        """test grid smaller than the potential support"""
        potential = gaussian_well()
        small = build_potential('zero_potential').grid(0.5)
        with self.assertRaises(DomainError):
            LippmannSchwingerSolver(potential, small, 0.5)


class LippmannSchwingerSolverTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.potential = gaussian_well()
        cls.grid = cls.potential.grid(0.6)
        cls.wave = WaveContext.along(1.0)
        cls.solver = LippmannSchwingerSolver(cls.potential, cls.grid, cls.wave.energy)
        cls.solution = cls.solver.plane(cls.wave)

    def test_direct_residual(self) -> None:
        """test direct solve residual and condition estimate"""
        self.assertEqual(self.solution.stats.method, 'direct')
        self.assertLessEqual(self.solution.residual, 1e-10)
        self.assertGreater(self.solution.stats.condition_estimate, 1.0)
        self.assertLess(self.solution.stats.condition_estimate, 1e10)

    def test_zero_incident_wave(self) -> None:
        """test vanishing incident wave gives the zero field without a solve"""
        incident = IncidentWave.sampled(self.wave, np.zeros(self.grid.size, dtype=complex))
        solution = self.solver.solve(incident)
        np.testing.assert_array_equal(solution.field.flat, 0.0)
        self.assertEqual(solution.residual, 0.0)
        self.assertEqual(solution.stats.iterations, 0)

    def test_krylov_agrees_with_direct(self) -> None:
        """test GMRES and LU solutions"""
        krylov = LippmannSchwingerSolver(self.potential, self.grid, self.wave.energy, method='krylov').plane(self.wave)
        self.assertLessEqual(krylov.residual, 1e-8)
        difference = np.max(np.abs(krylov.field.flat - self.solution.field.flat))
        self.assertLess(difference, 1e-6 * self.solution.field.max_norm())

    def test_born_series_for_weak_potential(self) -> None:
        """test fixed-point iteration below the spectral radius limit"""
        weak = gaussian_well(-0.1)
        solver = LippmannSchwingerSolver(weak, self.grid, self.wave.energy, method='born')
        self.assertLess(solver.estimate_spectral_radius(), 0.9)
        born = solver.plane(self.wave)
        direct = LippmannSchwingerSolver(weak, self.grid, self.wave.energy).plane(self.wave)
        np.testing.assert_allclose(born.field.flat, direct.field.flat, atol=1e-6)

    def test_evaluate_field_on_grid(self) -> None:
        """test field representation reproduces the grid solution"""
        points = self.grid.points()[::37]
        values = evaluate_field(self.solution, points)
        np.testing.assert_allclose(values, self.solution.field.flat[::37], rtol=1e-7, atol=1e-9)

    def test_reciprocity(self) -> None:
        """test a(k, theta) = a(-|k| theta, -n)"""
        theta = np.array([0.6, 0.0, 0.8])
        forward = amplitude(self.solution, DirectionGrid.single(theta)).amplitudes[0]
        reverse_wave = WaveContext(k=tuple(-self.wave.k_abs * theta))
        reverse = self.solver.plane(reverse_wave)
        backward = amplitude(reverse, DirectionGrid.single(-self.wave.direction)).amplitudes[0]
        self.assertLess(abs(forward - backward), 1e-8 * abs(forward))

    def test_t_matrix_identities(self) -> None:
        """test a = -4 pi^2 T and sigma = 16 pi^4 |T|^2"""
        theta = np.array([0.0, 0.6, 0.8])
        value = t_matrix(self.solution, theta)
        a = amplitude(self.solution, DirectionGrid.single(theta))
        self.assertLess(abs(a.amplitudes[0] + 4 * np.pi ** 2 * value.value), 1e-12 * abs(a.amplitudes[0]))
        self.assertAlmostEqual(value.cross_section / a.cross_section[0], 1.0, places=12)

    def test_optical_theorem(self) -> None:
        """test forward amplitude against the total cross section"""
        report = optical_theorem_check(self.solution, DirectionGrid.octahedral(110))
        self.assertTrue(report.passed)
        self.assertGreater(report.sphere_term, 0.0)

    def test_amplitude_csv(self) -> None:
        """test CSV columns and rows"""
        table = amplitude(self.solution, DirectionGrid.octahedral(14))
        with tempfile.TemporaryDirectory() as directory:
            path = table.to_csv(Path(directory) / 'sigma.csv')
            with path.open() as stream:
                rows = list(csv.reader(stream))
        self.assertEqual(rows[0], ['theta_x', 'theta_y', 'theta_z', 're_a', 'im_a', 'sigma'])
        self.assertEqual(len(rows), 15)
        self.assertAlmostEqual(float(rows[1][5]), table.cross_section[0], places=14)


class BornTests(SimpleTestCase):
    def test_weak_yukawa(self) -> None:
        """test |a - a_Born| <= 5 g^2 for g = 0.01 against the quadrature and the closed form"""
        g = 0.01
        potential = build_potential('yukawa_regularized', {'g': g, 'mu': 1.0, 'core': 0.5}, support_tol=1e-3)
        wave = WaveContext.along(1.0)
        grid = potential.grid(1.0)
        dirs = DirectionGrid.octahedral(50)
        exact = amplitude(solve_plane(potential, wave, grid), dirs).amplitudes
        first = born_amplitude(potential, wave, grid, dirs).amplitudes
        self.assertLessEqual(np.max(np.abs(exact - first)), 5 * g ** 2)
        transfer = wave.k_abs * np.linalg.norm(wave.direction[None, :] - dirs.points, axis=1)
        closed = yukawa_born_amplitude(g, 1.0, transfer, core=0.5)
        self.assertLessEqual(np.max(np.abs(exact - closed)), 5 * g ** 2)

    def test_born_error_is_quadratic(self) -> None:
        """test halving the coupling quarters the Born error"""
        wave = WaveContext.along(1.0)
        dirs = DirectionGrid.octahedral(14)
        errors = []
        for g in (-0.02, -0.01):
            potential = gaussian_well(g)
            grid = potential.grid(0.75)
            exact = amplitude(solve_plane(potential, wave, grid), dirs).amplitudes
            errors.append(np.max(np.abs(exact - born_amplitude(potential, wave, grid, dirs).amplitudes)))
        self.assertAlmostEqual(errors[0] / errors[1], 4.0, delta=0.3)

    def test_yukawa_closed_form(self) -> None:
        """test closed-form Born amplitude against the radial transform"""
        potential = build_potential('yukawa_regularized', {'g': 0.5, 'mu': 1.0, 'core': 0.5})
        for q in (0.0, 0.7, 1.9):
            numeric = -radial_transform(potential.profile, q, 60.0) / (2 * np.pi)
            closed = yukawa_born_amplitude(0.5, 1.0, q, core=0.5)
            self.assertAlmostEqual(float(closed), numeric, places=8)

    def test_pure_yukawa_limit(self) -> None:
        """test small core tends to -2g / (q^2 + mu^2)"""
        pure = yukawa_born_amplitude(0.3, 1.0, [0.0, 1.0])
        np.testing.assert_allclose(pure, [-0.6, -0.3])
        cored = yukawa_born_amplitude(0.3, 1.0, [0.0, 1.0], core=1e-4)
        np.testing.assert_allclose(cored, pure, rtol=1e-6)


class SphericalIncidenceTests(SimpleTestCase):
    def test_source_overlapping_grid(self) -> None:
        """test source support reaching the grid box"""
        potential = gaussian_well()
        solver = LippmannSchwingerSolver(potential, potential.grid(0.75), 0.5)
        with self.assertRaises(GeometryError):
            solver.spherical(build_form_factor('gaussian_source'), WaveContext.along(1.0, distance=6.0))

    def test_degenerate_source(self) -> None:
        """test vanishing source has no normalization"""
        rho = build_form_factor('gaussian_source', {'amplitude': 0.0})
        with self.assertRaises(DegenerateSourceError):
            normalization_bD(rho, WaveContext.along(1.0))

    def test_point_source_normalization(self) -> None:
        """test b_D of a unit point source"""
        wave = WaveContext.along(1.0, distance=100.0)
        value = normalization_bD(build_form_factor('point_source'), wave)
        self.assertAlmostEqual(value, np.exp(100j) / (2 * np.pi), places=12)

    def test_plane_wave_limit_without_potential(self) -> None:
        """test incident_D / b_D -> e^{ik.x} at rate 1/D"""
        potential = build_potential('zero_potential')
        report = convergence_study(potential, build_form_factor('point_source'), WaveContext.along(1.0),
                                   [50, 100, 200, 400, 800], potential.grid(0.5), DirectionGrid.octahedral(6))
        self.assertGreaterEqual(report.slopes['err_incident'], -1.3)
        self.assertLessEqual(report.slopes['err_incident'], -0.7)
        self.assertLessEqual(report.err_incident[-1], 2 * report.predicted_incident[-1])
        self.assertIsNone(report.slopes['err_amp'])
        self.assertTrue(report.passed)

    def test_field_and_amplitude_converge(self) -> None:
        """test A_D -> A and a_D -> a for a Gaussian well and source"""
        potential = gaussian_well()
        rho = build_form_factor('gaussian_source', resolution=0.5)
        report = convergence_study(potential, rho, WaveContext.along(1.0), [50, 100, 200, 400],
                                   potential.grid(0.75), DirectionGrid.octahedral(14))
        self.assertTrue(report.monotone['err_field'])
        self.assertLessEqual(report.err_field[-1], 0.25 * report.err_field[0])
        self.assertTrue(report.monotone['err_amp'])
        self.assertLessEqual(report.slopes['err_amp'], -0.8)
        with tempfile.TemporaryDirectory() as directory:
            path = report.to_json(Path(directory) / 'convergence.json')
            self.assertIn('"err_field"', path.read_text())
