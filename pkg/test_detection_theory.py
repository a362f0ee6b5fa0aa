#!/usr/bin/env python3
"""
Test suite for the Swerling-I detection model and its Monte Carlo oracle.
"""

import math
import unittest

import numpy as np
from scipy import integrate

from detection_theory import (
    DetectionTest,
    DomainError,
    PhysicalRadarParams,
    kappa_from_physical,
    mc_pd_estimate,
    snr_from_physical,
    statistic_density,
    swerling1_pd,
    swerling1_pd_dsnr,
    threshold_from_pfa,
)
from pomdp_core import draw_noise, gaussian_from_uniform, make_stream


class TestClosedForm(unittest.TestCase):
    """Threshold and closed-form P_d"""

    def test_threshold(self):
        self.assertAlmostEqual(threshold_from_pfa(1e-4), -math.log(1e-4), places=12)
        self.assertAlmostEqual(DetectionTest(snr_ratio=1.0, pfa=1e-4).threshold_gamma, 4 * math.log(10), places=12)
        self.assertAlmostEqual(threshold_from_pfa(math.exp(-5.0)), 5.0, places=12)
        self.assertLess(threshold_from_pfa(1 - 1e-12), 1e-11)

    def test_pd_examples(self):
        self.assertAlmostEqual(swerling1_pd(0.0, 1e-4), 1e-4, delta=1e-16)
        self.assertAlmostEqual(swerling1_pd(1.0, 1e-4), 0.01, delta=1e-14)
        self.assertAlmostEqual(swerling1_pd(3.0, 1e-4), 0.1, delta=1e-14)
        self.assertAlmostEqual(DetectionTest(snr_ratio=3.0, pfa=1e-4).pd, 0.1, delta=1e-14)
        print("✅ P_d examples (rho = 0, 1, 3) reproduce pfa, 0.01, 0.1")

    def test_pd_bounds_and_monotone(self):
        rho = np.logspace(-3, 4, 200)
        for pfa in (1e-6, 1e-4, 1e-2):
            pd = swerling1_pd(rho, pfa)
            self.assertTrue(np.all(pd >= pfa))
            self.assertTrue(np.all(pd < 1.0))
            self.assertTrue(np.all(np.diff(pd) > 0))

    def test_pd_vectorized_and_scalar(self):
        self.assertIsInstance(swerling1_pd(2.0, 1e-3), float)
        self.assertEqual(swerling1_pd(np.array([0.0, 1.0]), 1e-4).shape, (2,))

    def test_domain_errors(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with self.assertRaises(DomainError):
                swerling1_pd(1.0, bad)
        with self.assertRaises(DomainError):
            swerling1_pd(-1.0, 1e-4)
        with self.assertRaises(DomainError):
            DetectionTest(snr_ratio=-2.0, pfa=1e-4)
        self.assertTrue(issubclass(DomainError, ValueError))

    def test_derivative_matches_finite_difference(self):
        h = 1e-6
        for rho in (0.0 + 2 * h, 0.3, 1.0, 9.0, 150.0):
            for pfa in (1e-6, 1e-4, 1e-2):
                fd = (swerling1_pd(rho + h, pfa) - swerling1_pd(rho - h, pfa)) / (2 * h)
                self.assertAlmostEqual(swerling1_pd_dsnr(rho, pfa), fd, delta=1e-7 * max(1.0, abs(fd)))

    def test_statistic_density_tails(self):
        """Exceedance of the threshold under H1 / H0 integrates to P_d / pfa"""
        pfa = 1e-3
        gamma = threshold_from_pfa(pfa)
        for rho in (0.5, 4.0, 20.0):
            tail, _ = integrate.quad(lambda x: statistic_density(x, rho, 'H1'), gamma, np.inf)
            self.assertAlmostEqual(tail, swerling1_pd(rho, pfa), places=8)
        tail0, _ = integrate.quad(lambda x: statistic_density(x, 0.0, 'H0'), gamma, np.inf)
        self.assertAlmostEqual(tail0, pfa, places=10)
        self.assertEqual(statistic_density(-1.0, 2.0), 0.0)


class TestMonteCarloOracle(unittest.TestCase):
    """Monte Carlo matched-filter simulation against the closed form"""

    def test_grid_agreement(self):
        stream = make_stream(2024, 'oracle')
        trials = 1_000_000
        for pfa in (1e-2, 1e-4, 1e-6):
            for rho in (0.0, 1.0, 3.0, 9.0, 30.0):
                estimate, stderr = mc_pd_estimate(rho, pfa, trials, stream)
                exact = swerling1_pd(rho, pfa)
                bound = math.sqrt(exact * (1 - exact) / trials)
                self.assertLess(abs(estimate - exact), 3 * bound,
                                f"rho={rho}, pfa={pfa}: {estimate} vs {exact}")
                self.assertGreaterEqual(stderr, 0.0)
        print("✅ Monte Carlo P_d agrees with the closed form on a 15-point grid")

    def test_reference_point(self):
        trials = 1_000_000
        exact = 10 ** -0.4
        estimate, _ = mc_pd_estimate(9.0, 1e-4, trials, make_stream(11, 'oracle'))
        self.assertLess(abs(estimate - exact), 3 * math.sqrt(exact * (1 - exact) / trials))

    def test_false_alarm_rate(self):
        trials = 1_000_000
        estimate, _ = mc_pd_estimate(5.0, 1e-2, trials, make_stream(7, 'oracle'), hypothesis='H0')
        self.assertLess(abs(estimate - 1e-2), 3 * math.sqrt(1e-2 * 0.99 / trials))

    def test_trials_use_uniform_noise_tuples(self):
        """Each trial consumes one 4-uniform tuple, mapped to normals by inverse CDF"""
        estimate, _ = mc_pd_estimate(2.0, 1e-2, 20_000, make_stream(3, 'oracle'))
        z = gaussian_from_uniform(draw_noise(make_stream(3, 'oracle'), 4, size=20_000))
        statistic = np.abs(math.sqrt(2.0) * (z[:, 0] + 1j * z[:, 1]) + z[:, 2] + 1j * z[:, 3]) ** 2 / 2.0
        self.assertEqual(estimate, np.count_nonzero(statistic > -math.log(1e-2)) / 20_000)

    def test_trial_floor(self):
        with self.assertRaises(ValueError):
            mc_pd_estimate(1.0, 1e-2, 999, make_stream(1, 'oracle'))
        with self.assertRaises(ValueError):
            mc_pd_estimate(1.0, 1e-2, 10_000, make_stream(1, 'oracle'), hypothesis='H2')


class TestPhysicalRadar(unittest.TestCase):
    """Radar-equation helpers"""

    def setUp(self):
        self.params = PhysicalRadarParams(transmit_power=1e5, antenna_gain=1e4, wavelength=0.03,
                                          cross_section=1.0, system_temperature=500.0, losses=2.0)

    def test_kappa(self):
        p = self.params
        expected = (1e5 * 1e8 * 0.03 ** 2 * 1.0) / ((4 * math.pi) ** 3 * 1.380649e-23 * 2.0 * 500.0)
        self.assertAlmostEqual(kappa_from_physical(p) / expected, 1.0, places=12)

    def test_kappa_scaling(self):
        unit = PhysicalRadarParams(1.0, 1.0, 1.0, 1.0, 1.0, boltzmann=1.0)
        self.assertAlmostEqual(kappa_from_physical(unit), 1.0 / (4 * math.pi) ** 3, places=15)
        self.assertAlmostEqual(kappa_from_physical(PhysicalRadarParams(1.0, 2.0, 1.0, 1.0, 1.0, boltzmann=1.0))
                               / kappa_from_physical(unit), 4.0, places=12)
        self.assertAlmostEqual(kappa_from_physical(PhysicalRadarParams(1.0, 1.0, 1.0, 1.0, 1.0, losses=2.0,
                                                                       boltzmann=1.0))
                               / kappa_from_physical(unit), 0.5, places=12)

    def test_snr_matches_collapsed_form(self):
        kappa = kappa_from_physical(self.params)
        beamwidth = math.radians(2.0)
        r, theta, beta, delta = 40_000.0, 0.3, 0.31, 0.05
        expected = kappa * delta * math.cos(theta) ** 2 / r ** 4 * math.exp(-(beta - theta) ** 2 / (2 * beamwidth ** 2))
        self.assertAlmostEqual(snr_from_physical(self.params, r, theta, beta, delta, beamwidth) / expected, 1.0,
                               places=12)

    def test_gain_exponent(self):
        p = PhysicalRadarParams(1e5, 1e4, 0.03, 1.0, 500.0, gain_exponent=3.0)
        base = PhysicalRadarParams(1e5, 1e4, 0.03, 1.0, 500.0)
        ratio = snr_from_physical(p, 1e4, 0.5, 0.5, 0.1, 0.05) / snr_from_physical(base, 1e4, 0.5, 0.5, 0.1, 0.05)
        self.assertAlmostEqual(ratio, math.cos(0.5), places=12)

    def test_invalid_parameters(self):
        with self.assertRaises(DomainError):
            PhysicalRadarParams(0.0, 1e4, 0.03, 1.0, 500.0)
        with self.assertRaises(DomainError):
            snr_from_physical(self.params, 0.0, 0.0, 0.0, 0.1, 0.05)


def run_tests():
    """Run all tests"""
    print("=" * 80)
    print("DETECTION THEORY - TEST SUITE")
    print("=" * 80 + "\n")

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestClosedForm, TestMonteCarloOracle, TestPhysicalRadar):
        suite.addTests(loader.loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 80)
    print("TEST SUMMARY")
    print("=" * 80)
    print(f"Tests run: {result.testsRun}")
    print(f"Successes: {result.testsRun - len(result.failures) - len(result.errors)}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")

    if result.wasSuccessful():
        print("\n✅ ALL TESTS PASSED")
        return 0
    else:
        print("\n❌ SOME TESTS FAILED")
        return 1


if __name__ == "__main__":
    exit(run_tests())
