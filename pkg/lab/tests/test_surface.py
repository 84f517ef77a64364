import itertools
import math

import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import ClampActiveError
from lab.surface import (
    EssviSlice,
    EssviSurface,
    RawEssviSlice,
    SurfaceCaps,
    action_partials,
    apply_wing_cap,
    deform,
    essvi_partials,
    essvi_total_variance,
    is_admissible,
    psi_max,
    reparam,
    surface_implied_vols,
    to_raw,
    total_variance,
)


class ReparamTests(SimpleTestCase):
    def setUp(self):
        self.caps = SurfaceCaps()

    def test_extreme_raw_inputs_stay_admissible(self):
        values = (-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6)
        for log_theta, rho_raw, psi_raw in itertools.product(values, repeat=3):
            sl = reparam(RawEssviSlice(log_theta, rho_raw, psi_raw), self.caps)
            self.assertTrue(is_admissible(sl, self.caps), msg=f'{log_theta}, {rho_raw}, {psi_raw} -> {sl}')

    def test_to_raw_inverts_reparam_inside_the_cap(self):
        sl = EssviSlice(theta=0.04, rho=-0.3, psi=0.5)
        back = reparam(to_raw(sl, self.caps), self.caps)
        self.assertAlmostEqual(back.theta, sl.theta, places=12)
        self.assertAlmostEqual(back.rho, sl.rho, places=12)
        self.assertAlmostEqual(back.psi, sl.psi, places=10)

    def test_wing_cap_is_exact(self):
        capped = apply_wing_cap(EssviSlice(theta=4.0, rho=0.0, psi=1.5), self.caps)
        self.assertLessEqual(capped.psi * math.sqrt(capped.theta), self.caps.tau_max)
        self.assertAlmostEqual(capped.psi, 0.5, places=12)

    def test_psi_max_is_the_butterfly_bound(self):
        self.assertAlmostEqual(psi_max(0.0, self.caps), 2.0 - 1e-3)
        self.assertAlmostEqual(psi_max(-0.5, self.caps), 2.0 / 1.5 - 1e-3)

    def test_slice_validation(self):
        with self.assertRaises(ValueError):
            EssviSlice(theta=0.04, rho=1.0, psi=0.1)
        with self.assertRaises(ValueError):
            EssviSlice(theta=-0.01, rho=0.0, psi=0.1)
        with self.assertRaises(ValueError):
            EssviSurface(maturities=(0.5, 0.25), slices=(EssviSlice(0.01, 0.0, 0.1), EssviSlice(0.02, 0.0, 0.1)))


class TotalVarianceTests(SimpleTestCase):
    def test_atm_total_variance_equals_theta(self):
        sl = EssviSlice(theta=0.0371, rho=-0.7, psi=0.9)
        self.assertEqual(total_variance(sl, 0.0), sl.theta)

    def test_vectorized_matches_scalar(self):
        sl = EssviSlice(theta=0.02, rho=-0.4, psi=0.4)
        k = np.linspace(-0.5, 0.5, 11)
        grid = total_variance(sl, k)
        for ki, wi in zip(k, grid):
            self.assertAlmostEqual(total_variance(sl, float(ki)), wi, places=15)

    def test_partials_match_finite_differences(self):
        theta, rho, phi = 0.03, -0.35, 2.5
        k = np.array([-0.3, -0.1, 0.05, 0.2, 0.4])
        dtheta, drho, dphi = essvi_partials(EssviSlice(theta, rho, phi * math.sqrt(theta)), k)
        h = 1e-6
        fd_theta = (essvi_total_variance(theta + h, rho, phi, k) - essvi_total_variance(theta - h, rho, phi, k)) / (2 * h)
        fd_rho = (essvi_total_variance(theta, rho + h, phi, k) - essvi_total_variance(theta, rho - h, phi, k)) / (2 * h)
        fd_phi = (essvi_total_variance(theta, rho, phi + h, k) - essvi_total_variance(theta, rho, phi - h, k)) / (2 * h)
        np.testing.assert_allclose(dtheta, fd_theta, rtol=1e-6)
        np.testing.assert_allclose(drho, fd_rho, rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(dphi, fd_phi, rtol=1e-6, atol=1e-12)

    def test_surface_implied_vols_shape(self):
        surface = EssviSurface((0.1, 0.5), (EssviSlice(0.004, -0.4, 0.4), EssviSlice(0.02, -0.4, 0.4)))
        vols = surface_implied_vols(surface, np.linspace(-0.2, 0.2, 5), SurfaceCaps())
        self.assertEqual(vols.shape, (2, 5))
        self.assertAlmostEqual(vols[0, 2], math.sqrt(0.004 / 0.1), places=12)


class DeformTests(SimpleTestCase):
    def setUp(self):
        self.caps = SurfaceCaps()
        self.slice = EssviSlice(theta=0.02, rho=-0.4, psi=0.4)
        self.surface = EssviSurface((0.25,), (self.slice,))

    def test_identity_action_returns_same_surface(self):
        self.assertIs(deform(self.surface, 1.0, 0.0, self.caps), self.surface)

    def test_deformation_keeps_theta(self):
        out = deform(self.surface, 1.2, 0.1, self.caps).slices[0]
        self.assertEqual(out.theta, self.slice.theta)
        self.assertAlmostEqual(out.rho, -0.3, places=12)
        self.assertAlmostEqual(out.psi, 0.48, places=12)

    def test_action_partials_match_finite_differences(self):
        k = np.array([-0.3, -0.1, 0.0, 0.15, 0.3])
        scale, shift = 1.1, 0.05
        d_rho, d_psi = action_partials(self.slice, (scale, shift), k, self.caps)

        def w(s, r):
            return total_variance(deform(self.surface, s, r, self.caps).slices[0], k)

        h = 1e-6
        np.testing.assert_allclose(d_rho, (w(scale, shift + h) - w(scale, shift - h)) / (2 * h), rtol=1e-6, atol=1e-12)
        np.testing.assert_allclose(d_psi, (w(scale + h, shift) - w(scale - h, shift)) / (2 * h), rtol=1e-6, atol=1e-12)
        self.assertEqual(d_rho[2], 0.0)
        self.assertEqual(d_psi[2], 0.0)

    def test_clamp_is_reported(self):
        steep = EssviSlice(theta=0.02, rho=0.9, psi=0.4)
        with self.assertRaises(ClampActiveError):
            action_partials(steep, (1.0, 0.2), np.array([0.1]), self.caps)
