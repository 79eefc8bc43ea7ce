import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from domain.catalog import build_form_factor
from domain.grids import DirectionGrid, Grid3, ScalarField
from domain.waves import WaveContext
from scatterlab.exceptions import DomainError, OverlapError, SingularPointError

from .services import FreeResolvent, KernelMatrix, apply_R0
from .utils import ball_radius, diagonal_correction, kernel


def gaussian_density(width: float = 1.0, spacing: float = 0.25) -> ScalarField:
    grid = Grid3.covering([-6 * width] * 3, [6 * width] * 3, spacing)
    return ScalarField.from_function(grid, lambda points: np.exp(-np.sum(points ** 2, axis=1) / width ** 2))


class KernelTests(SimpleTestCase):
    def test_unit_distance(self) -> None:
        """test |x - y| = 1, |k| = 1"""
        value = kernel(0.5, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        self.assertAlmostEqual(value.real, 0.085990, places=5)
        self.assertAlmostEqual(value.imag, 0.133923, places=5)
        np.testing.assert_allclose(value, np.exp(1j) / (2 * np.pi), rtol=1e-15)

    def test_full_period(self) -> None:
        """test |x - y| = 2 pi / |k| is real"""
        value = kernel(0.5, [0.0, 0.0, 0.0], [2 * np.pi, 0.0, 0.0])
        self.assertAlmostEqual(value.real, 1.0 / (4 * np.pi ** 2), places=12)
        self.assertAlmostEqual(value.imag, 0.0, places=12)

    def test_zero_energy_limit(self) -> None:
        """test Coulomb kernel at E = 0"""
        self.assertAlmostEqual(kernel(0.0, [0, 0, 0], [0, 0, 3.0]), 1.0 / (6 * np.pi))

    def test_reciprocity(self) -> None:
        """test kernel(x, y) = kernel(y, x)"""
        x, y = [0.3, -1.2, 2.0], [1.1, 0.4, -0.5]
        self.assertEqual(kernel(0.7, x, y), kernel(0.7, y, x))

    def test_singular_point(self) -> None:
        """test coinciding points"""
        with self.assertRaises(SingularPointError):
            kernel(0.5, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])


class DiagonalCorrectionTests(SimpleTestCase):
    def test_ball_integral_closed_form(self) -> None:
        """test a = 1, |k| = 1 against 2(e^{i}(1 - i) - 1)"""
        spacing = (4 * np.pi / 3) ** (1 / 3)
        self.assertAlmostEqual(ball_radius(spacing), 1.0, places=14)
        value = diagonal_correction(0.5, spacing)
        expected = 2 * (np.exp(1j) * (1 - 1j) - 1)
        self.assertAlmostEqual(value, expected, places=12)
        self.assertAlmostEqual(value.real, 0.76354, places=4)
        self.assertAlmostEqual(value.imag, 0.60234, places=4)

    def test_zero_energy(self) -> None:
        """test correction equals a^2 at |k| = 0"""
        spacing = 0.3
        self.assertAlmostEqual(diagonal_correction(0.0, spacing), ball_radius(spacing) ** 2, places=15)

    def test_series_matches_closed_form(self) -> None:
        """test small |k| a series joins the closed form"""
        spacing = 1e-3
        radius = ball_radius(spacing)
        k_abs = 0.99e-3 / radius
        series = diagonal_correction(0.5 * k_abs ** 2, spacing)
        direct = 2 * radius ** 2 * np.sum([(1j * k_abs * radius) ** n / (math.factorial(n) * (n + 2))
                                           for n in range(8)])
        self.assertAlmostEqual(abs(series - direct) / abs(direct), 0.0, places=12)

    def test_vanishes_with_spacing(self) -> None:
        """test correction tends to zero with h"""
        self.assertLess(abs(diagonal_correction(0.5, 1e-4)), 1e-8)


class FreeResolventTests(SimpleTestCase):
    def setUp(self) -> None:
        self.resolvent = FreeResolvent(energy=0.5, workers=2)

    def test_zero_density(self) -> None:
        """test R0 0 = 0"""
        density = ScalarField.zeros(Grid3.cube((0, 0, 0), 1.0, 4))
        np.testing.assert_array_equal(self.resolvent.apply(density, [[5.0, 0.0, 0.0]]), 0.0)

    def test_apply_helper(self) -> None:
        """test module-level helper matches the resolvent method"""
        grid = Grid3.cube((0.0, 0.0, 0.0), 0.5, 4)
        density = ScalarField.point_like(grid, (0.0, 0.0, 0.0))
        targets = [[3.0, 0.0, 0.0], [0.0, 4.0, 1.0]]
        np.testing.assert_array_equal(apply_R0(density, 0.5, targets, workers=1),
                                      self.resolvent.apply(density, targets))

    def test_point_density_far_target(self) -> None:
        """test single cell equals the kernel times its integral"""
        grid = Grid3.cube((0.0, 0.0, 0.0), 0.15, 3)
        density = ScalarField.point_like(grid, (0.0, 0.0, 0.0))
        value = self.resolvent.apply(density, [[0.0, 0.0, 10.0]])[0]
        self.assertAlmostEqual(value, kernel(0.5, [0.0, 0.0, 10.0], [0.0, 0.0, 0.0]), places=12)

    def test_gaussian_refinement(self) -> None:
        """test Gaussian density at ten widths agrees with the refined grid"""
        targets = [[10.0, 0.0, 0.0], [0.0, 7.0, 7.0]]
        coarse = self.resolvent.apply(gaussian_density(spacing=0.25), targets)
        fine = self.resolvent.apply(gaussian_density(spacing=0.125), targets)
        np.testing.assert_allclose(coarse, fine, rtol=1e-6)

    def test_helmholtz_equation_away_from_source(self) -> None:
        """test (-1/2 Laplacian - E) R0 rho = 0 outside the support"""
        density = gaussian_density(spacing=0.5)
        center = np.array([9.0, 1.0, -2.0])
        step = 0.02
        stencil = [center]
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            stencil.extend([center + offset, center - offset])
        values = self.resolvent.apply(density, np.array(stencil))
        laplacian = (np.sum(values[1:]) - 6 * values[0]) / step ** 2
        residual = -0.5 * laplacian - 0.5 * values[0]
        self.assertLess(abs(residual), 1e-3 * abs(values[0]))

    def test_assemble_matches_apply(self) -> None:
        """test dense matrix and streamed application agree, diagonal corrected"""
        density = gaussian_density(spacing=0.75)
        points = density.grid.points()
        matrix = self.resolvent.assemble(points[:40], points, density.grid.spacing, density.grid.dims)
        np.testing.assert_allclose(matrix.matvec(density.flat), self.resolvent.apply(density, points[:40]),
                                   rtol=1e-12)
        self.assertAlmostEqual(matrix.entries[0, 0], diagonal_correction(0.5, 0.75))

    def test_kernel_matrix_round_trip(self) -> None:
        """test binary save and load"""
        grid = Grid3.cube((0, 0, 0), 1.0, 3)
        matrix = self.resolvent.assemble(grid.points()[:5], grid.points(), grid.spacing, grid.dims)
        with tempfile.TemporaryDirectory() as directory:
            path = matrix.save(Path(directory) / 'kernel.bin')
            header = path.read_bytes()[:4]
            loaded = KernelMatrix.load(path)
        self.assertEqual(header, b'SLKM')
        np.testing.assert_array_equal(loaded.entries, matrix.entries)
        np.testing.assert_array_equal(loaded.source_points, matrix.source_points)
        self.assertEqual(loaded.source_dims, (3, 3, 3))
        self.assertEqual(loaded.energy, 0.5)

    def test_incident_point_source(self) -> None:
        """test point source at D = 100 seen from the origin"""
        rho = build_form_factor('point_source')
        wc = WaveContext.along(1.0, distance=100.0)
        value = self.resolvent.incident_spherical(rho, wc, [[0.0, 0.0, 0.0]])[0]
        self.assertAlmostEqual(value, np.exp(100j) / (2 * np.pi), places=10)

    def test_incident_overlap(self) -> None:
        """test target inside the shifted source"""
        rho = build_form_factor('gaussian_source')
        wc = WaveContext.along(1.0, distance=3.0)
        with self.assertRaises(OverlapError):
            self.resolvent.incident_spherical(rho, wc, [[0.0, 0.0, 0.0]])

    def test_incident_phase_difference(self) -> None:
        """test relative phase of two targets tends to e^{ik.(x - x')}"""
        rho = build_form_factor('point_source')
        x, x_prime = np.array([0.5, 0.3, 1.0]), np.array([-0.4, 0.2, -0.7])
        errors = []
        for distance in (1e3, 1e4):
            wc = WaveContext.along(1.0, distance=distance)
            values = self.resolvent.incident_spherical(rho, wc, [x, x_prime])
            errors.append(abs(values[0] / values[1] - np.exp(1j * wc.k_vector @ (x - x_prime))))
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[1], 1e-3)

    def test_far_field_point_density(self) -> None:
        """test phi = 1/(2 pi) for a unit point density"""
        density = ScalarField.point_like(Grid3.cube((0, 0, 0), 0.15, 3), (0, 0, 0))
        far_field = self.resolvent.far_field_coefficient(density, DirectionGrid.octahedral(26))
        np.testing.assert_allclose(far_field.coefficients, 1.0 / (2 * np.pi), rtol=1e-14)

    def test_far_field_gaussian(self) -> None:
        """test phi of exp(-|y|^2) against (1/2 pi) pi^{3/2} e^{-k^2/4}"""
        far_field = self.resolvent.far_field_coefficient(gaussian_density(spacing=0.25), DirectionGrid.octahedral(14))
        expected = np.pi ** 1.5 * np.exp(-0.25) / (2 * np.pi)
        np.testing.assert_allclose(far_field.coefficients, expected, atol=1e-8)

    def test_far_field_shift_phase(self) -> None:
        """test shifting a density by a whole number of cells multiplies phi by e^{-i|k| theta.s}"""
        density = gaussian_density(spacing=0.5)
        shift = np.array([1.0, -0.5, 2.0])
        grid = density.grid
        shifted = ScalarField(grid=Grid3(origin=tuple(grid.lower + shift), spacing=grid.spacing, dims=grid.dims),
                              values=density.values)
        dirs = DirectionGrid.octahedral(14)
        phi = self.resolvent.far_field_coefficient(density, dirs).coefficients
        phi_shifted = self.resolvent.far_field_coefficient(shifted, dirs).coefficients
        np.testing.assert_allclose(phi_shifted, phi * np.exp(-1j * dirs.points @ shift), rtol=1e-10)

    def test_remainder_point_density_exact(self) -> None:
        """test point density has no far-field remainder"""
        density = ScalarField.point_like(Grid3.cube((0, 0, 0), 0.15, 3), (0, 0, 0))
        decay = self.resolvent.far_field_remainder_decay(density, [0, 0, 1], [20, 40, 80])
        self.assertTrue(decay.exact)
        self.assertTrue(decay.passed)

    def test_remainder_gaussian_slope(self) -> None:
        """test remainder decays like R^-2"""
        decay = self.resolvent.far_field_remainder_decay(gaussian_density(spacing=0.5), [0.6, 0.0, 0.8],
                                                         [20, 40, 80, 160, 320, 640])
        self.assertAlmostEqual(decay.slope, -2.0, delta=0.3)
        self.assertTrue(decay.passed)

    def test_remainder_dipole_slope(self) -> None:
        """test two opposite point charges"""
        grid = Grid3.cube((0, 0, 0), 1.0, 4)
        values = np.zeros(grid.dims)
        values[1, 1, 1] = 1.0 / grid.cell_volume
        values[2, 2, 2] = -1.0 / grid.cell_volume
        decay = self.resolvent.far_field_remainder_decay(ScalarField(grid=grid, values=values), [0.0, 0.6, 0.8],
                                                         [20, 40, 80, 160, 320, 640])
        self.assertTrue(decay.passed)

    def test_remainder_inside_support(self) -> None:
        """test decay radii inside the density grid"""
        with self.assertRaises(DomainError):
            self.resolvent.far_field_remainder_decay(gaussian_density(spacing=0.5), [0, 0, 1], [1, 20, 40])
