"""
Tests for pulsed projections and their absorbing-step counterpart.

Covers:
- projection schedules and the sawtooth model
- exact small-n return factors
- lattice recursion peaks and troughs
- S(t) envelope and period averages
- projected-state equivalence with the absorbing step and the Zeno limit
"""

import math

import numpy as np
import pytest

from qtimes_core import GaussianPacket
from qtimes_errors import ConfigError, NumericalError, ValidityWarning
from qtimes_propagators import absorption_factor, free_kernel
from qtimes_pulsed import (
    EQUIVALENCE_CONSTANT,
    ProjectionSchedule,
    SawtoothModel,
    equivalence_test,
    gp_exact_factor,
    gp_exact_small_n,
    gp_lattice_recursion,
    period_mean,
    projected_return_factor,
    pulsed_evolution,
    s_function,
    sawtooth_fp,
    tc_integral,
    time_averaged_factor,
    timescales,
    two_projection_factor,
)


# ═══════════════════════════════════════════════════════════════════
# Schedules and closed forms
# ═══════════════════════════════════════════════════════════════════


class TestSchedules:

    def test_covering(self):
        schedule = ProjectionSchedule.covering(0.1, 1.0)
        assert schedule.n == 9
        np.testing.assert_allclose(schedule.times(), 0.1 * np.arange(1, 10))
        assert schedule.tau == pytest.approx(1.0)

    def test_rejects_non_positive(self):
        with pytest.raises(ConfigError):
            ProjectionSchedule(0.1, 0.0, 0.1, 3)
        with pytest.raises(ConfigError):
            ProjectionSchedule(0.1, 0.1, 0.1, 0)
        with pytest.raises(ConfigError):
            SawtoothModel(1.0, -1.0)

    def test_sawtooth_projection_times(self):
        model = SawtoothModel(0.5, 2.0)
        assert model.projection_time(0) == 0.5
        assert model.projection_time(3) == 6.5


class TestExactFactors:

    def test_tc_integrals_sum(self):
        total = tc_integral(0.3, 0.7, 1.1, "++") + tc_integral(0.3, 0.7, 1.1, "+-")
        assert total == pytest.approx(1.0 / (2.0 * math.sqrt(2.1)))

    def test_tc_integral_rejects_bad_input(self):
        with pytest.raises(ConfigError):
            tc_integral(0.0, 1.0, 1.0)
        with pytest.raises(ConfigError):
            tc_integral(1.0, 1.0, 1.0, "--")

    def test_two_projection_factor(self):
        assert two_projection_factor(1.0, 1.0, 1e-14) == pytest.approx(0.25)
        assert two_projection_factor(1.0, 1.0, 1.0) == pytest.approx(1.0 / 3.0)

    @pytest.mark.parametrize("t, expected", [(0.5, 1.0), (1.0, 0.5), (1.5, 0.5), (2.0, 0.25), (4.0, 0.25)])
    def test_exact_factor(self, t, expected):
        assert gp_exact_factor(t, 1.0) == pytest.approx(expected, abs=1e-12)

    def test_exact_factor_outside_covered_regimes(self):
        with pytest.raises(ConfigError):
            gp_exact_factor(3.5, 1.0)

    def test_exact_kernel_scales_free_kernel(self):
        assert gp_exact_small_n(1.5, 1.0) == pytest.approx(0.5 * complex(free_kernel(0.0, 0.0, 1.5)))

    def test_single_projection_halves_return(self):
        assert projected_return_factor(0.3, 1.0) == pytest.approx(0.5, abs=1e-10)
        total = projected_return_factor(0.3, 1.0, "right") + projected_return_factor(0.3, 1.0, "left")
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_time_averages(self):
        assert time_averaged_factor(1) == pytest.approx(0.5, abs=1e-8)
        avg = time_averaged_factor(2)
        assert 0.25 < avg < 0.5
        with pytest.raises(ConfigError):
            time_averaged_factor(3)

    @pytest.mark.parametrize("tau", [0.4, 2.5])
    def test_single_projection_average_for_any_duration(self, tau):
        assert time_averaged_factor(1, tau) == pytest.approx(0.5, abs=1e-8)


# ═══════════════════════════════════════════════════════════════════
# Lattice recursion and the sawtooth
# ═══════════════════════════════════════════════════════════════════


class TestLattice:

    @pytest.fixture(scope="class")
    def table(self):
        return gp_lattice_recursion(6, 1e-3, 8)

    def test_peaks(self, table):
        k = np.arange(1, 7)
        np.testing.assert_allclose(table.peaks * (k + 1), 1.0, atol=1e-2)

    def test_troughs_half_of_peaks(self, table):
        np.testing.assert_allclose(2 * table.troughs / table.peaks, 1.0, atol=2e-2)

    def test_first_panel_is_free(self, table):
        s, fp = table.panel(0)
        assert np.all(fp[s < 1] == 1.0)

    def test_exact_points(self, table):
        s, fp = table.panel(1)
        assert fp[np.argmin(np.abs(s - 1.5))] == pytest.approx(0.5, abs=1e-6)

    def test_tail_mass_small(self, table):
        assert table.tail_mass < 1e-10

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigError):
            gp_lattice_recursion(0)
        with pytest.raises(ConfigError):
            gp_lattice_recursion(3, lattice_dx=0.1)


class TestSawtooth:

    @pytest.fixture
    def model(self):
        return SawtoothModel(1.0, 1.0)

    @pytest.mark.parametrize("t, expected", [(0.5, 1.0), (1.0, 0.5), (1.5, 0.5), (2.0, 0.25), (3.0, 1.0 / 6.0)])
    def test_values(self, model, t, expected):
        assert sawtooth_fp(t, model) == pytest.approx(expected)

    def test_peak_before_next_projection(self, model):
        assert sawtooth_fp(2.999999, model) == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_matches_exact_two_projections(self, model):
        t = np.array([2.0, 3.0 - 1e-9])
        expected = [gp_exact_factor(2.0, 1.0), two_projection_factor(1.0, 1.0, 1.0 - 1e-9)]
        np.testing.assert_allclose(sawtooth_fp(t, model), expected, atol=1e-8)

    def test_scalar_in_scalar_out(self, model):
        assert isinstance(sawtooth_fp(0.2, model), float)

    def test_negative_time(self, model):
        with pytest.raises(ConfigError):
            sawtooth_fp(-1.0, model)


class TestSFunction:

    def test_vanishes_for_identical_factors(self):
        t = np.linspace(0.1, 5.0, 50)
        s = s_function(t, lambda u: absorption_factor(u, 1.5), 1.5)
        np.testing.assert_allclose(s, 0.0, atol=1e-12)

    def test_needs_positive_time(self):
        with pytest.raises(ConfigError):
            s_function(0.0, lambda u: u, 1.0)

    def test_period_mean(self):
        assert period_mean(np.sin, 0.3, 2 * np.pi) == pytest.approx(0.0, abs=1e-12)

    def test_lattice_envelope_after_three_periods(self):
        table = gp_lattice_recursion(5, 2e-3, 32)
        keep = table.s > 3
        s = table.s[keep]
        values = table.fp[keep] / absorption_factor(s, EQUIVALENCE_CONSTANT) - 1.0
        assert np.max(np.abs(values)) < 0.4
        for j in range(3, 6):
            in_period = (s > j) & (s <= j + 1)
            assert abs(np.mean(values[in_period])) < 0.05


# ═══════════════════════════════════════════════════════════════════
# Grid equivalence
# ═══════════════════════════════════════════════════════════════════


class TestEquivalence:

    def test_timescales(self):
        packet = GaussianPacket(5.0, -10.0, 1.0)
        scales = timescales(packet, 0.08)
        assert scales["recommended_v0"] == pytest.approx(EQUIVALENCE_CONSTANT / 0.08)
        assert scales["inverse_energy"] == pytest.approx(1.0 / packet.energy_mean)

    def test_coarse_grid_rejected(self):
        with pytest.raises(NumericalError):
            pulsed_evolution(GaussianPacket(5.0, -10.0, 1.0), 0.08, 1.6, n=512)

    def test_short_run_warns(self):
        with pytest.warns(ValidityWarning):
            report = equivalence_test(GaussianPacket(5.0, -10.0, 1.0), 0.08, tau=0.3, include_potential=False)
        assert math.isnan(report.max_wavefn_deviation)
        assert report.reflection_prob_potential is None

    @pytest.mark.slow
    def test_pulsed_matches_absorbing_step(self):
        report = equivalence_test(GaussianPacket(5.0, -10.0, 1.0), 0.08)
        assert report.v0 == pytest.approx(EQUIVALENCE_CONSTANT / 0.08)
        assert report.max_wavefn_deviation < 0.1
        assert report.reflection_prob_pulsed < 0.05
        assert report.reflection_prob_potential < 0.05

    @pytest.mark.slow
    def test_zeno_regime_reflects(self):
        packet = GaussianPacket(5.0, -10.0, 1.0)
        eps = 0.01 / packet.energy_mean
        report = equivalence_test(packet, eps, tau=1.2, x_range=(-20.0, 30.0), n=32768, include_potential=False)
        assert report.reflection_prob_pulsed > 0.9
