import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from lab.env import (
    ANCHOR_ACTION,
    FEATURE_DIM,
    Action,
    ActionBounds,
    EnvConfig,
    HestonParams,
    MarketMakingEnv,
    PenaltyWeights,
    expected_pnl_and_delta,
    features,
    filter_update,
    heston_step,
    intensities,
    latent_surface,
    penalties,
    price_noise_std,
    quote_grid,
    reset,
    step,
    true_prices,
)
from lab.exceptions import EpisodeDoneError
from lab.noarb import NUMERICAL_FLOOR
from lab.surface import deform, is_admissible

SMALL = EnvConfig(steps_per_episode=6, penalty_strikes=11)
WEIGHTS = PenaltyWeights(lambda_shape=0.3, lambda_arb=0.02, lambda_cvar=0.01)


class ConfigTests(SimpleTestCase):
    def test_default_grid_contains_atm(self):
        self.assertIn(0.0, EnvConfig().k_grid)
        self.assertEqual(len(EnvConfig().k_grid), 21)

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            EnvConfig(maturities=(0.5, 0.25))
        with self.assertRaises(ValueError):
            EnvConfig(filter_rate=0.0)

    def test_action_bounds(self):
        bounds = ActionBounds()
        self.assertTrue(bounds.contains(ANCHOR_ACTION))
        clipped = bounds.clip(Action(alpha=1.0, hedge=-0.5, psi_scale=3.0, rho_shift=-1.0, dual=-2.0))
        self.assertEqual(clipped, Action(alpha=0.05, hedge=0.0, psi_scale=1.5, rho_shift=-0.2, dual=0.0))


class ResetTests(SimpleTestCase):
    def test_reset_is_deterministic(self):
        self.assertEqual(reset(SMALL), reset(SMALL, np.random.default_rng(1)))

    def test_latent_surface_is_admissible(self):
        surface = latent_surface(SMALL)
        self.assertEqual(len(surface), len(SMALL.maturities))
        for sl in surface.slices:
            self.assertTrue(is_admissible(sl, SMALL.caps))
        self.assertTrue(np.all(np.diff(surface.thetas) > 0.0))

    def test_anchor_quotes_are_arbitrage_free(self):
        bf, cal, shape = penalties(reset(SMALL), ANCHOR_ACTION, SMALL)
        self.assertLessEqual(bf, NUMERICAL_FLOOR)
        self.assertLessEqual(cal, NUMERICAL_FLOOR)
        self.assertGreaterEqual(shape, 0.0)

    def test_features(self):
        obs = features(reset(SMALL), SMALL)
        self.assertEqual(obs.shape, (FEATURE_DIM,))
        self.assertTrue(np.all(np.isfinite(obs)))
        np.testing.assert_array_equal(obs[-5:], ANCHOR_ACTION.as_array())


class QuoteTests(SimpleTestCase):
    def setUp(self):
        self.state = reset(SMALL)

    def test_quote_ordering(self):
        quotes = quote_grid(self.state, Action(0.03, 0.5, 1.1, -0.05, 0.0), SMALL)
        self.assertTrue(np.all(quotes.ask >= quotes.mid))
        self.assertTrue(np.all(quotes.mid >= quotes.bid))
        self.assertTrue(np.all(quotes.bid >= 0.0))
        self.assertEqual(quotes.mid.shape, (len(SMALL.maturities), len(SMALL.k_grid)))

    def test_zero_spread_quotes_at_mid(self):
        quotes = quote_grid(self.state, replace(ANCHOR_ACTION, alpha=0.0), SMALL)
        np.testing.assert_array_equal(quotes.ask, quotes.mid)

    def test_anchor_mid_is_the_fair_price(self):
        quotes = quote_grid(self.state, ANCHOR_ACTION, SMALL)
        np.testing.assert_array_equal(quotes.mid, true_prices(self.state, SMALL))

    def test_intensities_decrease_with_the_spread(self):
        c_star = true_prices(self.state, SMALL)
        narrow = quote_grid(self.state, replace(ANCHOR_ACTION, alpha=0.005), SMALL)
        wide = quote_grid(self.state, replace(ANCHOR_ACTION, alpha=0.04), SMALL)
        buy_n, sell_n = intensities(narrow.ask, narrow.bid, c_star, SMALL.k_grid, SMALL)
        buy_w, sell_w = intensities(wide.ask, wide.bid, c_star, SMALL.k_grid, SMALL)
        self.assertTrue(np.all(buy_w < buy_n))
        self.assertTrue(np.all(sell_w <= sell_n))
        self.assertTrue(np.all(buy_n <= SMALL.intensity.lambda0))

    def test_expected_pnl_shape_mismatch(self):
        with self.assertRaises(ValueError):
            expected_pnl_and_delta(np.ones(3), np.ones(3), np.ones(3), np.ones(3), np.ones(3), np.ones(4))

    def test_symmetric_fills_have_no_net_delta(self):
        pnl, delta = expected_pnl_and_delta(
            np.full(2, 0.5), np.full(2, 0.5), np.array([1.1, 2.1]), np.array([0.9, 1.9]), np.array([1.0, 2.0]), np.array([0.6, 0.4])
        )
        self.assertAlmostEqual(pnl, 0.2)
        self.assertEqual(delta, 0.0)


class HestonTests(SimpleTestCase):
    def test_variance_stays_non_negative(self):
        cfg = replace(SMALL, dt=0.1)
        spot, var = np.full(500, 100.0), np.full(500, 0.04)
        rng = np.random.default_rng(2)
        for _ in range(50):
            spot, var = heston_step(spot, var, cfg, rng)
        self.assertTrue(np.all(var >= 0.0))
        self.assertTrue(np.all(spot > 0.0))

    def test_scalar_step(self):
        spot, var = heston_step(100.0, 0.04, SMALL, np.random.default_rng(0))
        self.assertIsInstance(spot, float)
        self.assertIsInstance(var, float)

    def test_return_and_variance_shocks_are_correlated(self):
        cfg = EnvConfig()
        n = 200_000
        spot, var = heston_step(np.full(n, 100.0), np.full(n, cfg.heston.v0), cfg, np.random.default_rng(3))
        corr = np.corrcoef(np.log(spot / 100.0), var - cfg.heston.v0)[0, 1]
        self.assertAlmostEqual(corr, cfg.heston.rho_sv, delta=0.01)

    def test_zero_vol_of_vol_is_gbm(self):
        cfg = replace(EnvConfig(), heston=HestonParams(xi=0.0))
        p = cfg.heston
        self.assertEqual(p.v0, p.v_bar)
        n = 1000
        spot, var = np.full(n, 100.0), np.full(n, p.v0)
        for seed in range(5):
            shocks = np.random.default_rng(seed).standard_normal(size=(2, n))
            z_s = p.rho_sv * shocks[0] + math.sqrt(1.0 - p.rho_sv * p.rho_sv) * shocks[1]
            expected = spot * np.exp((p.mu - 0.5 * p.v_bar) * cfg.dt + math.sqrt(p.v_bar * cfg.dt) * z_s)
            spot, var = heston_step(spot, var, cfg, np.random.default_rng(seed))
            np.testing.assert_array_equal(var, p.v_bar)
            np.testing.assert_allclose(spot, expected, rtol=1e-13)

class FilterTests(SimpleTestCase):
    def setUp(self):
        self.latent = latent_surface(SMALL)
        self.estimate = deform(self.latent, 1.3, 0.1, SMALL.caps)

    def test_full_rate_returns_latent(self):
        self.assertIs(filter_update(self.estimate, self.latent, 1.0, SMALL.caps), self.latent)
        self.assertIs(filter_update(self.latent, self.latent, 0.1, SMALL.caps), self.latent)

    def test_partial_rate_moves_toward_latent(self):
        updated = filter_update(self.estimate, self.latent, 0.25, SMALL.caps)
        for est, new, lat in zip(self.estimate.slices, updated.slices, self.latent.slices):
            self.assertLess(new.rho, est.rho)
            self.assertGreater(new.rho, lat.rho)
            self.assertLess(new.psi, est.psi)
            self.assertGreater(new.psi, lat.psi)
            self.assertAlmostEqual(new.theta, lat.theta, places=15)

    def test_invalid_rate(self):
        with self.assertRaises(ValueError):
            filter_update(self.estimate, self.latent, 1.5)


class StepTests(SimpleTestCase):
    def test_reward_decomposition(self):
        action = Action(0.02, 0.4, 1.1, 0.05, 0.3)
        _, reward, b, _ = step(reset(SMALL), action, SMALL, np.random.default_rng(0), WEIGHTS)
        self.assertAlmostEqual(b.lambda_eff, WEIGHTS.lambda_arb + 0.3)
        expected = (
            b.pnl_quote + b.pnl_hedge - WEIGHTS.lambda_shape * b.shape
            - b.lambda_eff * (b.bf + b.cal) - WEIGHTS.lambda_cvar * b.cvar_est
        )
        self.assertAlmostEqual(reward, expected, places=12)
        self.assertEqual(reward, b.reward)

    def test_step_advances_the_state(self):
        state = reset(SMALL)
        nxt, _, _, obs = step(state, ANCHOR_ACTION, SMALL, np.random.default_rng(0))
        self.assertEqual(nxt.t, 1)
        self.assertEqual(len(nxt.log_returns), 1)
        self.assertAlmostEqual(nxt.log_returns[0], math.log(nxt.spot / state.spot))
        self.assertEqual(nxt.prev_action, ANCHOR_ACTION)
        self.assertEqual(obs.shape, (FEATURE_DIM,))

    def test_same_seed_same_path(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            state, rewards = reset(SMALL), []
            for _ in range(SMALL.steps_per_episode):
                state, reward, _, _ = step(state, Action(0.02, 0.6, 0.9, -0.05, 0.1), SMALL, rng, WEIGHTS)
                rewards.append(reward)
            return state.spot, rewards

        self.assertEqual(run(3), run(3))
        self.assertNotEqual(run(3), run(4))

    def test_episode_done(self):
        state = replace(reset(SMALL), t=SMALL.steps_per_episode)
        with self.assertRaises(EpisodeDoneError):
            step(state, ANCHOR_ACTION, SMALL, np.random.default_rng(0))

    def test_ablation_switches(self):
        action = Action(0.02, 0.5, 1.2, 0.1, 0.5)
        cfg = replace(SMALL, use_cvar=False, use_arb_penalty=False)
        _, reward, b, _ = step(reset(cfg), action, cfg, np.random.default_rng(0), WEIGHTS)
        self.assertEqual(b.cvar_est, 0.0)
        self.assertEqual(b.lambda_eff, 0.0)
        self.assertAlmostEqual(reward, b.pnl_quote + b.pnl_hedge - WEIGHTS.lambda_shape * b.shape, places=12)

    def test_price_noise_override(self):
        state = reset(SMALL)
        self.assertGreater(price_noise_std(state, SMALL), 0.0)
        self.assertEqual(price_noise_std(state, replace(SMALL, price_noise_std=0.0)), 0.0)


class MarketMakingEnvTests(SimpleTestCase):
    def test_episode_loop(self):
        env = MarketMakingEnv(SMALL, np.random.default_rng(0))
        obs = env.reset()
        self.assertEqual(obs.shape, (FEATURE_DIM,))
        done, steps = False, 0
        while not done:
            obs, reward, breakdown, done = env.step(ANCHOR_ACTION, WEIGHTS)
            self.assertTrue(math.isfinite(reward))
            steps += 1
        self.assertEqual(steps, SMALL.steps_per_episode)
        with self.assertRaises(EpisodeDoneError):
            env.step(ANCHOR_ACTION)
