"""
Tests for units, Gaussian packets, superpositions and phase-space records.

Covers:
- packet normalisation, free evolution and derivatives
- momentum representation consistency
- Zeno time against its estimate
- overlaps, superposition normalisation and mirror pairs
- PhaseSpaceField quadrature helpers
- error types
"""

import numpy as np
import pytest
from scipy import integrate

from qtimes_core import (
    GaussianPacket,
    GaussianSuperposition,
    PhaseSpaceField,
    PhysParams,
    TimeGrid,
    gaussian_overlap,
    mirror_pair,
    zeno_time,
    zeno_time_estimate,
)
from qtimes_errors import ConfigError, NumericalError, QTimesError


X = np.linspace(-40.0, 40.0, 8001)


# ═══════════════════════════════════════════════════════════════════
# Parameter records
# ═══════════════════════════════════════════════════════════════════


class TestParams:

    def test_defaults(self):
        p = PhysParams()
        assert p.mass == 1.0 and p.hbar == 1.0

    @pytest.mark.parametrize("mass, hbar", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_rejects_non_positive(self, mass, hbar):
        with pytest.raises(ConfigError):
            PhysParams(mass, hbar)

    def test_time_grid(self):
        grid = TimeGrid(0.0, 2.0, 5)
        np.testing.assert_allclose(grid.samples(), [0.0, 0.5, 1.0, 1.5, 2.0])
        assert grid.step == pytest.approx(0.5)

    def test_time_grid_rejects_reversed(self):
        with pytest.raises(ConfigError):
            TimeGrid(1.0, 0.0, 10)
        with pytest.raises(ConfigError):
            TimeGrid(0.0, 1.0, 1)


# ═══════════════════════════════════════════════════════════════════
# Gaussian packets
# ═══════════════════════════════════════════════════════════════════


class TestGaussianPacket:

    @pytest.mark.parametrize("t", [0.0, 1.5, 4.0])
    def test_normalised(self, t):
        packet = GaussianPacket(5.0, -2.0, 1.3)
        norm = integrate.trapezoid(np.abs(packet.amplitude(X, t)) ** 2, X)
        assert norm == pytest.approx(1.0, abs=1e-10)

    def test_centre_moves_classically(self):
        packet = GaussianPacket(5.0, -2.0, 1.0, PhysParams(mass=2.0))
        t = 3.0
        dens = np.abs(packet.amplitude(X, t)) ** 2
        mean = integrate.trapezoid(X * dens, X)
        assert mean == pytest.approx(packet.center(t), abs=1e-8)
        assert packet.center(t) == pytest.approx(2.0)

    def test_derivative_matches_finite_difference(self):
        packet = GaussianPacket(1.0, -3.0, 0.8)
        x = np.linspace(-3, 3, 13)
        h = 1e-5
        numeric = (packet.amplitude(x + h, 0.7) - packet.amplitude(x - h, 0.7)) / (2 * h)
        np.testing.assert_allclose(packet.derivative(x, 0.7), numeric, atol=1e-7)

    def test_momentum_amplitude_is_fourier_transform(self):
        packet = GaussianPacket(2.0, -1.5, 1.0)
        p = np.linspace(-12, 9, 6001)
        for x0, t in [(0.0, 0.0), (1.0, 0.5), (-2.0, 2.0)]:
            integrand = np.exp(1j * p * x0) * packet.momentum_amplitude(p, t)
            psi = integrate.trapezoid(integrand, p) / np.sqrt(2 * np.pi)
            assert psi == pytest.approx(complex(packet.amplitude(x0, t)), abs=1e-9)

    def test_momentum_normalised(self):
        packet = GaussianPacket(0.0, 4.0, 0.5)
        p = np.linspace(-6, 14, 4001)
        assert integrate.trapezoid(np.abs(packet.momentum_amplitude(p)) ** 2, p) == pytest.approx(1.0, abs=1e-10)

    def test_no_spreading_keeps_width(self):
        packet = GaussianPacket(0.0, -1.0, 1.0)
        dens = np.abs(packet.amplitude(X, 10.0, spreading=False)) ** 2
        mean = integrate.trapezoid(X * dens, X)
        var = integrate.trapezoid((X - mean) ** 2 * dens, X)
        assert var == pytest.approx(1.0, rel=1e-8)

    def test_invalid_sigma(self):
        with pytest.raises(ConfigError):
            GaussianPacket(0.0, 1.0, 0.0)

    def test_mirrored(self):
        packet = GaussianPacket(3.0, -2.0, 1.0)
        m = packet.mirrored()
        assert (m.q0, m.p0) == (-3.0, 2.0)
        np.testing.assert_allclose(m.amplitude(X, 1.0), packet.amplitude(-X, 1.0), atol=1e-14)


class TestZenoTime:

    def test_close_to_estimate_for_sharp_momentum(self):
        packet = GaussianPacket(0.0, -10.0, 1.0)
        assert zeno_time(packet) == pytest.approx(2 * zeno_time_estimate(packet), rel=2e-3)

    def test_estimate_is_order_of_magnitude_form(self):
        packet = GaussianPacket(0.0, -4.0, 2.0, PhysParams(mass=3.0))
        assert zeno_time_estimate(packet) == pytest.approx(3.0 * 2.0 / 4.0)

    def test_estimate_undefined_at_rest(self):
        with pytest.raises(ConfigError):
            zeno_time_estimate(GaussianPacket(0.0, 0.0, 1.0))

    def test_energy_mean(self):
        packet = GaussianPacket(0.0, -10.0, 1.0)
        assert packet.energy_mean == pytest.approx(50.0 + 0.125)


# ═══════════════════════════════════════════════════════════════════
# Overlaps and superpositions
# ═══════════════════════════════════════════════════════════════════


class TestSuperpositions:

    def test_self_overlap(self):
        packet = GaussianPacket(1.0, 2.0, 0.7)
        assert gaussian_overlap(packet, packet) == pytest.approx(1.0, abs=1e-12)

    def test_overlap_matches_quadrature(self):
        a = GaussianPacket(1.0, 2.0, 0.7)
        b = GaussianPacket(-0.5, -1.0, 1.4)
        numeric = integrate.trapezoid(np.conj(a.amplitude(X)) * b.amplitude(X), X)
        assert gaussian_overlap(a, b) == pytest.approx(numeric, abs=1e-10)

    def test_superposition_normalised(self):
        state = GaussianSuperposition([GaussianPacket(1.0, 0.0, 1.0), GaussianPacket(-1.0, 0.0, 1.0)], [1.0, -1.0])
        norm = integrate.trapezoid(np.abs(state.amplitude(X)) ** 2, X)
        assert norm == pytest.approx(1.0, abs=1e-10)

    def test_zero_norm_rejected(self):
        packet = GaussianPacket(0.0, 0.0, 1.0)
        with pytest.raises(ConfigError):
            GaussianSuperposition([packet, packet], [1.0, -1.0])

    def test_mismatched_params_rejected(self):
        with pytest.raises(ConfigError):
            GaussianSuperposition([GaussianPacket(0, 0, 1), GaussianPacket(0, 0, 1, PhysParams(mass=2.0))], [1, 1])

    def test_mirror_pair_is_even(self):
        pair = mirror_pair(GaussianPacket(8.0, -3.0, 1.0))
        np.testing.assert_allclose(pair.amplitude(X, 1.3), pair.amplitude(-X, 1.3), atol=1e-14)
        assert abs(pair.derivative(0.0, 2.0)) < 1e-12


# ═══════════════════════════════════════════════════════════════════
# Phase-space records
# ═══════════════════════════════════════════════════════════════════


class TestPhaseSpaceField:

    def test_gaussian_moments(self):
        packet = GaussianPacket(2.0, -1.0, 1.5)
        p = np.linspace(-4, 2, 241)
        q = np.linspace(-12, 16, 561)
        w = PhaseSpaceField.gaussian(packet, p, q)
        mean_p, mean_q, var_p, var_q = w.moments()
        assert w.norm() == pytest.approx(1.0, abs=1e-6)
        assert mean_p == pytest.approx(-1.0, abs=1e-8)
        assert mean_q == pytest.approx(2.0, abs=1e-8)
        assert var_q == pytest.approx(1.5 ** 2, rel=1e-6)
        assert var_p == pytest.approx(1.0 / (4 * 1.5 ** 2), rel=1e-6)

    def test_shape_checked(self):
        with pytest.raises(ConfigError):
            PhaseSpaceField(np.arange(3.0), np.arange(4.0), np.zeros((4, 3)))

    def test_marginals_integrate_to_norm(self):
        packet = GaussianPacket(0.0, 0.0, 1.0)
        w = PhaseSpaceField.gaussian(packet, np.linspace(-4, 4, 161), np.linspace(-8, 8, 321))
        assert np.sum(w.position_marginal()) * w.dq == pytest.approx(w.norm())
        assert np.sum(w.momentum_marginal()) * w.dp == pytest.approx(w.norm())


class TestErrors:

    def test_hierarchy(self):
        assert issubclass(ConfigError, QTimesError) and issubclass(ConfigError, ValueError)
        assert issubclass(NumericalError, RuntimeError)

    def test_numerical_error_reports_estimate(self):
        err = NumericalError("too coarse", estimate=0.5, tolerance=0.1)
        assert "estimate=5.000e-01" in str(err)
        assert err.tolerance == 0.1
