"""
Tests for closed-form propagators and the crossing composition.

Covers:
- free kernel propagation of a packet
- restricted (image) kernel support
- edge and absorption factors
- delta kernel: closed form against adaptive quadrature
- kernel sample dispatch
- full absorbing-step kernel and scattering amplitudes
- composition across the origin against a scattering-state oracle
"""

import numpy as np
import pytest
from scipy import integrate

from qtimes_core import GaussianPacket
from qtimes_errors import ConfigError, NumericalError
from qtimes_propagators import (
    KernelSample,
    StepPotential,
    absorption_factor,
    delta_kernel,
    edge_factor,
    free_kernel,
    kernel_sample,
    pdx_compose_first_crossing,
    restricted_kernel,
    semiclassical_step_kernel,
    step_edge_kernel,
    step_full_kernel,
    step_scattering_amplitudes,
    transmitted_amplitude_oracle,
    transmitted_wavenumber,
    uniform_panels,
)


# ═══════════════════════════════════════════════════════════════════
# Free and restricted kernels
# ═══════════════════════════════════════════════════════════════════


class TestFreeKernel:

    def test_propagates_packet(self):
        packet = GaussianPacket(0.0, 0.0, 1.0)
        x0 = np.linspace(-12, 12, 4001)
        for x1 in (0.0, 1.3, -2.0):
            integrand = free_kernel(x1, x0, 1.0) * packet.amplitude(x0)
            assert integrate.trapezoid(integrand, x0) == pytest.approx(complex(packet.amplitude(x1, 1.0)), abs=1e-8)

    def test_rejects_non_positive_time(self):
        with pytest.raises(ConfigError):
            free_kernel(0.0, 1.0, 0.0)

    def test_symmetric(self):
        assert free_kernel(1.0, -0.5, 0.3) == pytest.approx(free_kernel(-0.5, 1.0, 0.3))


class TestRestrictedKernel:

    def test_zero_outside_half_line(self):
        assert restricted_kernel(-1.0, 2.0, 0.5) == 0
        assert restricted_kernel(1.0, -2.0, 0.5) == 0

    def test_is_free_minus_image(self):
        expected = free_kernel(1.0, 2.0, 0.5) - free_kernel(-1.0, 2.0, 0.5)
        assert restricted_kernel(1.0, 2.0, 0.5) == pytest.approx(expected)

    def test_vanishes_at_wall(self):
        assert abs(restricted_kernel(1e-9, 2.0, 0.5)) < 1e-7


# ═══════════════════════════════════════════════════════════════════
# Step edge factors
# ═══════════════════════════════════════════════════════════════════


class TestEdgeFactors:

    def test_series_is_continuous(self):
        assert edge_factor(0.0) == pytest.approx(1.0)
        assert edge_factor(2e-6) == pytest.approx(edge_factor(5e-7), abs=1e-6)

    def test_absorption_factor_closed_form(self):
        t = np.array([0.1, 0.5, 2.0])
        np.testing.assert_allclose(absorption_factor(t, 2.0), (1 - np.exp(-2.0 * t)) / (2.0 * t), rtol=1e-12)

    def test_absorption_factor_limits(self):
        assert absorption_factor(1e-9, 3.0) == pytest.approx(1.0)
        assert absorption_factor(1e3, 3.0) == pytest.approx(1.0 / 3e3, rel=1e-9)

    def test_edge_kernel_reduces_to_free(self):
        assert step_edge_kernel(0.8, 0.0, absorbing=True) == pytest.approx(free_kernel(0.0, 0.0, 0.8))

    def test_absorbing_edge_kernel(self):
        t, v0 = 0.8, 1.5
        expected = free_kernel(0.0, 0.0, t) * absorption_factor(t, v0)
        assert step_edge_kernel(t, v0, absorbing=True) == pytest.approx(expected)

    def test_step_potential(self):
        step = StepPotential.absorbing(2.0)
        assert step.is_absorbing and step.height == -2j
        with pytest.raises(ConfigError):
            StepPotential.absorbing(-1.0)


# ═══════════════════════════════════════════════════════════════════
# Delta and semiclassical kernels
# ═══════════════════════════════════════════════════════════════════


class TestDeltaKernel:

    @pytest.mark.parametrize("x1, x0", [(0.5, 1.0), (-0.5, 1.0), (-1.5, 0.2)])
    def test_closed_form_matches_quadrature(self, x1, x0):
        closed = delta_kernel(x1, x0, 0.7, 1.0)
        quad = delta_kernel(x1, x0, 0.7, 1.0, method="quad")
        assert complex(closed) == pytest.approx(complex(quad), abs=1e-7)

    def test_zero_strength_is_free(self):
        assert delta_kernel(0.3, 1.0, 0.5, 0.0) == pytest.approx(free_kernel(0.3, 1.0, 0.5))

    def test_attractive_rejected(self):
        with pytest.raises(ConfigError):
            delta_kernel(0.3, 1.0, 0.5, -1.0)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            delta_kernel(0.3, 1.0, 0.5, 1.0, method="series")


class TestSemiclassicalKernel:

    def test_right_side_unaffected(self):
        assert semiclassical_step_kernel(1.0, 2.0, 0.5, 3.0) == pytest.approx(free_kernel(1.0, 2.0, 0.5))

    def test_damping_by_time_on_the_left(self):
        # straight path from 1 to -1: half the time on the left
        ratio = semiclassical_step_kernel(-1.0, 1.0, 0.5, 2.0) / free_kernel(-1.0, 1.0, 0.5)
        assert ratio == pytest.approx(np.exp(-2.0 * 0.25))


class TestKernelSample:

    def test_free_sample(self):
        sample = kernel_sample("free", 1.0, 0.0, 2.0, 0.5)
        assert isinstance(sample, KernelSample)
        assert sample.kernel_id == "free"
        assert sample.value == pytest.approx(complex(free_kernel(1.0, 0.0, 1.5)))

    def test_step_full_sample(self):
        sample = kernel_sample("step_full", -0.5, 1.0, 0.8, v0=2.0)
        assert isinstance(sample, KernelSample)
        assert sample.value == pytest.approx(step_full_kernel(-0.5, 1.0, 0.8, 2.0))

    def test_unknown_id(self):
        with pytest.raises(ConfigError):
            kernel_sample("harmonic", 1.0, 0.0, 1.0)


class TestStepFullKernel:

    @pytest.mark.parametrize("x1, x0", [(1.0, 0.5), (-1.0, 0.5), (0.5, -1.0), (-0.7, -0.3)])
    def test_zero_strength_is_free(self, x1, x0):
        assert step_full_kernel(x1, x0, 0.8, 0.0) == pytest.approx(complex(free_kernel(x1, x0, 0.8)), rel=1e-10)

    def test_continuous_across_edge(self):
        right = step_full_kernel(1e-7, 1.0, 0.5, 2.0)
        left = step_full_kernel(-1e-7, 1.0, 0.5, 2.0)
        assert left == pytest.approx(right, rel=1e-5)

    def test_symmetric_across_edge(self):
        assert step_full_kernel(0.4, -0.6, 0.7, 3.0) == pytest.approx(step_full_kernel(-0.6, 0.4, 0.7, 3.0))

    def test_edge_point_is_edge_kernel(self):
        expected = complex(step_edge_kernel(0.9, 2.0, absorbing=True))
        assert step_full_kernel(0.0, 0.0, 0.9, 2.0) == pytest.approx(expected)

    def test_too_close_to_edge_raises(self):
        with pytest.raises(NumericalError):
            step_full_kernel(1e-4, 1e-4, 1.0, 2.0)

    def test_negative_strength_rejected(self):
        with pytest.raises(ConfigError):
            step_full_kernel(1.0, 0.5, 1.0, -1.0)

    @pytest.mark.slow
    def test_propagates_packet_into_absorber(self):
        packet = GaussianPacket(5.0, -10.0, 1.0)
        x0, w = uniform_panels(-3.0, 13.0, 100)
        kernel = np.array([step_full_kernel(-0.5, x, 0.55, 2.0) for x in x0])
        value = np.sum(w * kernel * packet.amplitude(x0))
        oracle = transmitted_amplitude_oracle(packet, 2.0, -0.5, 0.55)
        assert abs(value - oracle) < 2e-3 * abs(oracle)


class TestScatteringAmplitudes:

    def test_large_absorber_reflects(self):
        p = -np.sqrt(2.0)
        _, r400 = step_scattering_amplitudes(p, 400.0)
        _, r1000 = step_scattering_amplitudes(p, 1000.0)
        # 1 - |R| falls off as sqrt(2 E/V0)
        assert abs(r400) == pytest.approx(1 - np.sqrt(2 / 400), abs=5e-3)
        assert abs(r1000) > 0.95

    def test_flux_balance_for_random_steps(self):
        rng = np.random.default_rng(11)
        energy = 10 ** rng.uniform(-2, 2, 100)
        v0 = 10 ** rng.uniform(-2, 3, 100)
        for e, v in zip(energy, v0):
            p = -np.sqrt(2 * e)
            trans, refl = step_scattering_amplitudes(p, v)
            entering = abs(trans) ** 2 * transmitted_wavenumber(p, v).real / abs(p)
            assert 0 <= abs(refl) ** 2 <= 1
            assert abs(refl) ** 2 + entering == pytest.approx(1.0, abs=1e-10)

    def test_right_moving_wave_rejected(self):
        with pytest.raises(ConfigError):
            step_scattering_amplitudes(1.0, 2.0)

    @pytest.mark.parametrize("v0", [0.0, -1.0])
    def test_non_positive_strength_rejected(self, v0):
        with pytest.raises(ConfigError):
            step_scattering_amplitudes(-1.0, v0)


# ═══════════════════════════════════════════════════════════════════
# Composition across the origin
# ═══════════════════════════════════════════════════════════════════


def test_uniform_panels_exact_for_polynomials():
    nodes, weights = uniform_panels(0.0, 2.0, 3)
    assert np.sum(weights * nodes ** 5) == pytest.approx(64.0 / 6.0, rel=1e-13)


class TestComposition:

    @pytest.fixture
    def packet(self):
        return GaussianPacket(5.0, -10.0, 1.0)

    def test_exact_matches_scattering_oracle(self, packet):
        exact = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55)
        oracle = transmitted_amplitude_oracle(packet, 2.0, -0.5, 0.55)
        assert abs(exact - oracle) < 2e-3 * abs(oracle)

    def test_semiclassical_close_for_weak_absorber(self, packet):
        exact = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55)
        approx = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55, mode="semiclassical")
        assert abs(approx - exact) < 0.05 * abs(exact)

    def test_last_crossing_agrees_with_first(self, packet):
        exact = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55)
        first = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55, mode="semiclassical")
        last = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55, mode="semiclassical_last")
        assert abs(last - exact) < 0.05 * abs(exact)
        assert abs(last - first) < 0.05 * abs(first)

    def test_full_output_reports_estimate(self, packet):
        value, estimate = pdx_compose_first_crossing(packet, 2.0, -0.5, 0.55, full_output=True)
        assert estimate <= max(1e-4 * abs(value), 1e-9)

    @pytest.mark.parametrize("kwargs", [{"x1": 0.5}, {"tau": 0.0}, {"mode": "midpoint"}])
    def test_rejects_bad_arguments(self, packet, kwargs):
        args = {"v0": 2.0, "x1": -0.5, "tau": 0.55}
        args.update(kwargs)
        with pytest.raises(ConfigError):
            pdx_compose_first_crossing(packet, **args)
