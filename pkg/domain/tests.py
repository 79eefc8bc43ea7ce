from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from rest_framework.exceptions import NotFound
from rest_framework.serializers import ValidationError
from scipy import optimize

from scatterlab.exceptions import DomainError

from .catalog import build_form_factor, build_potential, describe
from .choices import octahedral_sizes
from .grids import DirectionGrid, Grid3, ScalarField
from .services import HypothesisService, radial_transform, sample_cloud
from .waves import WaveContext


class GridTests(SimpleTestCase):
    def test_cell_centres(self) -> None:
        """test cell centres sit half a cell inside the origin"""
        grid = Grid3(origin=(-1.0, -1.0, -1.0), spacing=0.5, dims=(4, 4, 4))
        x_axis, _, _ = grid.axes()
        np.testing.assert_allclose(x_axis, [-0.75, -0.25, 0.25, 0.75])
        self.assertEqual(grid.points().shape, (64, 3))
        np.testing.assert_allclose(grid.upper, [1.0, 1.0, 1.0])

    def test_rejects_degenerate_grid(self) -> None:
        """test too few cells or nonpositive spacing"""
        with self.assertRaises(ValidationError):
            Grid3(origin=(0, 0, 0), spacing=0.1, dims=(1, 4, 4))
        with self.assertRaises(ValidationError):
            Grid3(origin=(0, 0, 0), spacing=0.0, dims=(4, 4, 4))

    def test_covering_contains_box(self) -> None:
        """test covering grid contains the requested box"""
        grid = Grid3.covering([-2.3, -2.3, -2.3], [2.3, 2.3, 2.3], 0.5)
        self.assertTrue(np.all(grid.lower <= -2.3))
        self.assertTrue(np.all(grid.upper >= 2.3))
        np.testing.assert_allclose(grid.center, 0.0, atol=1e-12)

    def test_scalar_field_rejects_non_finite(self) -> None:
        """test NaN samples are refused"""
        grid = Grid3(origin=(0, 0, 0), spacing=1.0, dims=(2, 2, 2))
        values = np.zeros(8)
        values[3] = np.nan
        with self.assertRaises(ValidationError):
            ScalarField(grid=grid, values=values)

    def test_scalar_field_is_read_only(self) -> None:
        """test values cannot be modified in place"""
        field = ScalarField.zeros(Grid3(origin=(0, 0, 0), spacing=1.0, dims=(2, 2, 2)))
        with self.assertRaises(ValueError):
            field.values[0, 0, 0] = 1.0

    def test_point_like_integral(self) -> None:
        """test single-cell density integrates to its total"""
        grid = Grid3.cube((0.0, 0.0, 0.0), 1.5, 3)
        field = ScalarField.point_like(grid, (0.0, 0.0, 0.0), total=2.0)
        self.assertAlmostEqual(field.integral(), 2.0)
        self.assertEqual(np.count_nonzero(field.values), 1)


class DirectionGridTests(SimpleTestCase):
    def test_weights_sum_to_four_pi(self) -> None:
        """test every built-in rule integrates the constant"""
        for size in octahedral_sizes:
            dirs = DirectionGrid.octahedral(size)
            self.assertEqual(len(dirs), size)
            self.assertAlmostEqual(float(np.sum(dirs.weights)), 4.0 * np.pi, delta=1e-10)
        product = DirectionGrid.product(12, 24)
        self.assertAlmostEqual(float(np.sum(product.weights)), 4.0 * np.pi, delta=1e-10)

    def test_polynomial_exactness(self) -> None:
        """test x^2 and x^4 y^2 z^2 integrals"""
        dirs = DirectionGrid.octahedral(110)
        x, y, z = dirs.points.T
        self.assertAlmostEqual(dirs.integrate(x ** 2), 4.0 * np.pi / 3.0, places=12)
        # int x^4 y^2 z^2 dOmega = 4 pi * 3 / 945
        self.assertAlmostEqual(dirs.integrate(x ** 4 * y ** 2 * z ** 2), 4.0 * np.pi * 3.0 / 945.0, places=12)

    def test_unknown_rule(self) -> None:
        """test unsupported octahedral size"""
        with self.assertRaises(ValidationError):
            DirectionGrid.octahedral(7)

    def test_single_direction(self) -> None:
        """test single direction is normalized"""
        dirs = DirectionGrid.single([0.0, 0.0, 2.0])
        np.testing.assert_allclose(dirs.points[0], [0.0, 0.0, 1.0])


class WaveContextTests(SimpleTestCase):
    def test_derived_quantities(self) -> None:
        """test energy, direction and source position"""
        wc = WaveContext(k=(0.0, 0.0, 2.0), distance=50.0)
        self.assertAlmostEqual(wc.energy, 2.0)
        np.testing.assert_allclose(wc.direction, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(wc.source_position, [0.0, 0.0, -50.0])
        self.assertEqual(wc.with_distance(10.0).distance, 10.0)

    def test_zero_wave_vector(self) -> None:
        """test k = 0 is rejected"""
        with self.assertRaises(ValidationError):
            WaveContext(k=(0.0, 0.0, 0.0))


class CatalogTests(SimpleTestCase):
    def test_describe_full_and_filtered(self) -> None:
        """test catalog listing"""
        names = [entry['name'] for entry in describe()]
        self.assertEqual(names, sorted(names))
        self.assertIn('yukawa_regularized', names)
        gaussian = [entry['name'] for entry in describe('gaussian')]
        self.assertEqual(gaussian, ['gaussian_source', 'gaussian_well'])

    def test_unknown_name(self) -> None:
        """test unknown entries"""
        with self.assertRaises(NotFound):
            describe('no-such-entry')
        with self.assertRaises(NotFound):
            build_potential('gaussian_source')

    def test_parameter_range(self) -> None:
        """test out-of-range and unknown parameters"""
        with self.assertRaises(ValidationError):
            build_potential('gaussian_well', {'width': 100.0})
        with self.assertRaises(ValidationError):
            build_potential('gaussian_well', {'depth': 1.0})

    def test_gaussian_support(self) -> None:
        """test support radius of exp(-r^2) at relative 1e-12"""
        potential = build_potential('gaussian_well', {'g': -2.0, 'width': 1.0})
        self.assertAlmostEqual(potential.support_radius, np.sqrt(12 * np.log(10)), delta=1e-3)

    def test_yukawa_core_is_smooth(self) -> None:
        """test regularized Yukawa is finite at the origin and matches e^{-mu r}/r far out"""
        potential = build_potential('yukawa_regularized', {'g': 1.0, 'mu': 1.0, 'core': 0.5})
        radii = np.array([0.0, 1e-8, 1e-3])
        values = potential.radial(radii)
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(values[0], values[1], places=6)
        far = potential.radial(np.array([20.0]))[0]
        self.assertAlmostEqual(far / (np.exp(-20.0) / 20.0), 1.0, places=6)

    def test_yukawa_support_by_bisection(self) -> None:
        """test support radius sits where the declared tail bound meets the threshold"""
        potential = build_potential('yukawa_regularized', {'g': 0.01, 'mu': 1.0, 'core': 0.5}, support_tol=1e-3)
        radius = potential.support_radius
        threshold = 1e-3 * 0.01 * 0.25
        tail = np.exp(-radius) / radius + 0.75 * np.exp(-2.0 * radius)
        self.assertAlmostEqual(0.01 * tail / threshold, 1.0, places=6)
        self.assertLessEqual(abs(potential.radial([radius])[0]), threshold)

    def test_yukawa_core_too_large(self) -> None:
        """test core at or beyond 1/mu"""
        with self.assertRaises(ValidationError):
            build_potential('yukawa_regularized', {'mu': 1.0, 'core': 1.5})

    def test_declared_envelope_constant(self) -> None:
        """test Gaussian well constant comes from its closed form"""
        potential = build_potential('gaussian_well', {'g': -2.0, 'width': 1.0})
        power = (5.0 + potential.envelope_eps) / 2.0 + 1.0
        expected = 2.0 * 10.0 * power ** power * np.exp(-(power - 1.0))
        self.assertAlmostEqual(potential.envelope_constant / expected, 1.0, places=12)


class HypothesisServiceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.service = HypothesisService()

    def test_sample_cloud_deterministic(self) -> None:
        """test validator cloud is reproducible"""
        np.testing.assert_array_equal(sample_cloud(2.0, 256), sample_cloud(2.0, 256))
        self.assertTrue(np.all(np.abs(sample_cloud(2.0, 256)) <= 2.0))

    def test_zero_potential_passes(self) -> None:
        """test V = 0 passes with maximum 0"""
        report = self.service.validate_potential(build_potential('zero_potential'))
        self.assertTrue(report.passed)
        self.assertEqual(report.max_weighted, 0.0)

    def test_gaussian_well_passes(self) -> None:
        """test V = -2 exp(-r^2)"""
        potential = build_potential('gaussian_well', {'g': -2.0, 'width': 1.0})
        self.assertTrue(self.service.validate_potential(potential).passed)
        self.assertTrue(self.service.validate_potential(potential.scaled(0.5)).passed)
        self.assertTrue(self.service.validate_potential(potential.scaled(-1.0)).passed)

    def test_understated_envelope_fails(self) -> None:
        """test sampled derivatives are checked against the declared constant"""
        potential = build_potential('gaussian_well', {'g': -2.0, 'width': 1.0})
        report = self.service.validate_potential(potential)
        self.assertLess(report.max_weighted, report.bound)
        understated = replace(potential, envelope_constant=0.5 * report.max_weighted)
        self.assertFalse(self.service.validate_potential(understated).passed)

    def test_lorentzian_fails(self) -> None:
        """test V = 1/(1+r^2) decays too slowly"""
        report = self.service.validate_potential(build_potential('lorentzian_tail', {'g': 1.0}))
        self.assertFalse(report.passed)

    def test_sample_radius_must_cover_support(self) -> None:
        """test sample radius below support radius"""
        potential = build_potential('gaussian_well')
        with self.assertRaises(DomainError):
            self.service.validate_potential(potential, sample_radius=1.0)

    def test_form_factors(self) -> None:
        """test Gaussian passes, zero is degenerate, power law fails"""
        gaussian = self.service.validate_form_factor(build_form_factor('gaussian_source'))
        self.assertTrue(gaussian.passed)
        self.assertFalse(gaussian.degenerate)

        zero = self.service.validate_form_factor(build_form_factor('gaussian_source', {'amplitude': 0.0}))
        self.assertTrue(zero.passed)
        self.assertTrue(zero.degenerate)

        power_law = self.service.validate_form_factor(build_form_factor('power_law_source', {'power': 3.0}))
        self.assertFalse(power_law.passed)

    def test_wiener_gaussian(self) -> None:
        """test normalized Gaussian transform equals e^{-1/4} on every direction"""
        rho = build_form_factor('gaussian_source', {'amplitude': np.pi ** -1.5, 'width': 1.0})
        report = self.service.wiener_check(rho, 1.0, DirectionGrid.octahedral(26))
        self.assertTrue(report.passed)
        np.testing.assert_allclose(report.values, np.exp(-0.25), atol=1e-8)
        self.assertLess(np.ptp(np.abs(report.values)), 1e-10)

    def test_wiener_zero_source(self) -> None:
        """test rho = 0 fails with minimum 0"""
        rho = build_form_factor('gaussian_source', {'amplitude': 0.0})
        report = self.service.wiener_check(rho, 1.0, DirectionGrid.octahedral(6))
        self.assertFalse(report.passed)
        self.assertEqual(report.minimum, 0.0)

    def test_wiener_shell_zero(self) -> None:
        """test shell source fails at the radius where its transform vanishes"""
        rho = build_form_factor('shell_source', {'amplitude': 1.0, 'radius': 2.0, 'width': 0.5})
        root = optimize.brentq(lambda kappa: radial_transform(rho.profile, kappa, rho.support_radius),
                               1.2, 2.0, xtol=1e-13)
        failing = self.service.wiener_check(rho, root, DirectionGrid.octahedral(6), tol=1e-6)
        self.assertFalse(failing.passed)
        passing = self.service.wiener_check(rho, 0.5 * root, DirectionGrid.octahedral(6), tol=1e-6)
        self.assertTrue(passing.passed)

    def test_wiener_requires_positive_k(self) -> None:
        """test |k| = 0"""
        with self.assertRaises(DomainError):
            self.service.wiener_check(build_form_factor('gaussian_source'), 0.0)
