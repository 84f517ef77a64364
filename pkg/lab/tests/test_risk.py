import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from scipy.special import ndtri

from lab.pricing import norm_pdf
from lab.risk import (
    CvarConfig,
    ScenarioBatch,
    cvar_smoothed,
    empirical_cvar_exact,
    empirical_var,
    ru_derivative,
    ru_objective,
    sample_scenarios,
    solve_eta,
)


def batch_from_losses(losses):
    return ScenarioBatch(pnl=-np.asarray(losses, dtype=float))


class EmpiricalTests(SimpleTestCase):
    def test_var_and_exact_cvar(self):
        batch = batch_from_losses([1.0, 2.0, 3.0, 4.0])
        self.assertEqual(empirical_var(batch, 0.5), 3.0)
        self.assertEqual(empirical_cvar_exact(batch, 0.5), 3.5)

    def test_fractional_tail_weight(self):
        batch = batch_from_losses([1.0, 2.0, 3.0, 4.0])
        # alpha*N = 1.5: la peor pérdida completa y media de la segunda
        self.assertAlmostEqual(empirical_cvar_exact(batch, 0.375), (4.0 + 0.5 * 3.0) / 1.5)

    def test_batch_validation(self):
        with self.assertRaises(ValueError):
            ScenarioBatch(pnl=[])
        with self.assertRaises(ValueError):
            ScenarioBatch(pnl=[1.0, float('inf')])

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            CvarConfig(tail_fraction=0.0)
        with self.assertRaises(ValueError):
            CvarConfig(tau_cvar=0.0)
        self.assertTrue(CvarConfig(tau_cvar=0.0, hard_hinge=True).hard_hinge)


class SmoothedCvarTests(SimpleTestCase):
    def test_small_batch(self):
        batch = batch_from_losses([1.0, 2.0, 3.0, 4.0])
        cfg = CvarConfig(tail_fraction=0.5, tau_cvar=1e-4)
        eta = solve_eta(batch, cfg)
        self.assertAlmostEqual(eta, 3.0, delta=0.01)
        self.assertLess(abs(ru_derivative(eta, batch, cfg)), 1e-10)
        value = cvar_smoothed(batch, cfg)
        self.assertGreaterEqual(value, 3.5 - 1e-12)
        self.assertLessEqual(value, 3.5 + 1e-4 * math.log(2.0) / 0.5)

    def test_hard_hinge_returns_exact_values(self):
        batch = batch_from_losses([1.0, 2.0, 3.0, 4.0])
        cfg = CvarConfig(tail_fraction=0.5, hard_hinge=True)
        self.assertEqual(solve_eta(batch, cfg), 3.0)
        self.assertEqual(cvar_smoothed(batch, cfg), 3.5)

    def test_smoothing_gap_is_bounded(self):
        rng = np.random.default_rng(7)
        for tau in (1e-2, 1e-3, 1e-4):
            cfg = CvarConfig(tail_fraction=0.05, tau_cvar=tau)
            for _ in range(20):
                batch = ScenarioBatch(pnl=rng.normal(0.0, rng.uniform(0.1, 2.0), int(rng.integers(20, 300))))
                gap = cvar_smoothed(batch, cfg) - empirical_cvar_exact(batch, 0.05)
                self.assertGreaterEqual(gap, -1e-9)
                self.assertLessEqual(gap, tau * math.log(2.0) / 0.05 + 1e-9)

    def test_normal_tail(self):
        n = 10_000
        batch = ScenarioBatch(pnl=ndtri((np.arange(n) + 0.5) / n))
        value = cvar_smoothed(batch, CvarConfig(tail_fraction=0.05, tau_cvar=1e-3))
        self.assertAlmostEqual(value, float(norm_pdf(ndtri(0.95))) / 0.05, delta=0.05)
        self.assertAlmostEqual(value, 2.0627, delta=0.05)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        batch = ScenarioBatch(pnl=rng.normal(size=200))
        cfg = CvarConfig(tail_fraction=0.1, tau_cvar=1e-3)
        shifted = ScenarioBatch(pnl=batch.pnl - 5.0)
        self.assertAlmostEqual(cvar_smoothed(shifted, cfg), cvar_smoothed(batch, cfg) + 5.0, places=8)

    def test_positive_homogeneity_with_scaled_temperature(self):
        rng = np.random.default_rng(4)
        batch = ScenarioBatch(pnl=rng.normal(size=200))
        cfg = CvarConfig(tail_fraction=0.1, tau_cvar=1e-3)
        scaled = ScenarioBatch(pnl=3.0 * batch.pnl)
        self.assertAlmostEqual(cvar_smoothed(scaled, replace(cfg, tau_cvar=3e-3)), 3.0 * cvar_smoothed(batch, cfg), places=8)
        self.assertAlmostEqual(empirical_cvar_exact(scaled, 0.1), 3.0 * empirical_cvar_exact(batch, 0.1), places=10)

    def test_objective_is_minimised_at_eta(self):
        rng = np.random.default_rng(5)
        batch = ScenarioBatch(pnl=rng.normal(size=300))
        cfg = CvarConfig(tail_fraction=0.05, tau_cvar=1e-2)
        eta = solve_eta(batch, cfg)
        best = ru_objective(eta, batch, cfg)
        for offset in (-0.1, -0.01, 0.01, 0.1):
            self.assertGreaterEqual(ru_objective(eta + offset, batch, cfg), best)


class ScenarioTests(SimpleTestCase):
    def test_sampling_is_reproducible(self):
        cfg = CvarConfig(n_scenarios=128, price_noise_std=0.02)
        args = (np.array([0.5, 0.2, 0.1]), np.array([0.01, 0.02, -0.005]), 0.3, 0.0, cfg)
        a = sample_scenarios(*args, np.random.default_rng(11))
        b = sample_scenarios(*args, np.random.default_rng(11))
        np.testing.assert_array_equal(a.pnl, b.pnl)
        self.assertEqual(len(a), 128)

    def test_zero_noise_and_zero_fills_is_degenerate(self):
        cfg = CvarConfig(n_scenarios=16, price_noise_std=0.0)
        batch = sample_scenarios(np.zeros(4), np.ones(4), 2.0, 0.5, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(batch.pnl, 1.0)

    def test_sample_moments_match_the_model(self):
        fills, edges = np.array([0.5, 2.0, 1.0]), np.array([0.3, -0.1, 0.2])
        hedge, delta_s, noise = 2.0, 0.1, 0.5
        cfg = CvarConfig(n_scenarios=200_000, price_noise_std=noise)
        batch = sample_scenarios(fills, edges, hedge, delta_s, cfg, np.random.default_rng(21))
        # Poisson: media = varianza = fills
        mean = float(fills @ edges + hedge * delta_s)
        variance = float(fills @ (edges * edges) + hedge ** 2 * noise ** 2)
        self.assertAlmostEqual(batch.pnl.mean(), mean, delta=0.015)
        self.assertAlmostEqual(batch.pnl.var(), variance, delta=0.03)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            sample_scenarios(np.ones(3), np.ones(4), 0.0, 0.0, CvarConfig(), np.random.default_rng(0))
