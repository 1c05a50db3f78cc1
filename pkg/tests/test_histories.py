"""
Tests for decoherent histories of crossing the origin.

Covers:
- class operator specs and exhaustive sets
- probabilities, candidate probabilities and the decoherence measure
- the recrossing bound on the grid, in phase space and in closed form
- absorbing-step realization of the class operators
- two-sided crossings split by momentum sector
- completeness of the exhaustive set, one-way splitting and the backflow flag
"""

import numpy as np
import pytest

from qtimes_arrival import backflow_witness_state, find_backflow_window, window_probability
from qtimes_core import GaussianPacket, PhaseSpaceField, mirror_pair
from qtimes_engine import SpatialField, free_evolve
from qtimes_errors import ConfigError
from qtimes_histories import (
    ClassOperatorSpec,
    DecoherenceReport,
    apply_class_operator,
    crossing_probabilities_twosided,
    crossing_specs,
    decoherence_functional,
    decoherence_measure,
    decoherence_scan,
    dm2_bound,
    dm2_straddling_estimate,
    heisenberg_projector,
    p12_sandwich,
    sine_kernel,
    twosided_decoherence,
    wigner_sandwich,
)


@pytest.fixture
def packet():
    # reaches the origin at t = 1
    return GaussianPacket(20.0, -20.0, 1.0)


@pytest.fixture
def field(packet):
    return SpatialField.from_state(packet, -60.0, 60.0, 4096)


# ═══════════════════════════════════════════════════════════════════
# Specs
# ═══════════════════════════════════════════════════════════════════


class TestSpecs:

    def test_exhaustive_set(self):
        specs = crossing_specs([0.0, 1.0, 2.0])
        assert [s.kind for s in specs] == ["cross_interval", "cross_interval", "nonconcross"]
        assert (specs[-1].t1, specs[-1].t2) == (0.0, 2.0)

    def test_times_must_increase(self):
        with pytest.raises(ConfigError):
            crossing_specs([0.0, 1.0, 1.0])
        with pytest.raises(ConfigError):
            crossing_specs([0.0])

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ClassOperatorSpec("cross_twice", 0.0, 1.0)
        with pytest.raises(ConfigError):
            ClassOperatorSpec("cross_interval", 1.0, 0.0)
        with pytest.raises(ConfigError):
            ClassOperatorSpec("cross_right", 0.0, 1.0, v0=2.0)

    def test_measure(self):
        d = np.array([[0.5, 0.1], [0.1, 0.5]])
        assert decoherence_measure(d) == pytest.approx(0.04)
        assert decoherence_measure(np.diag([0.5, 0.5])) == 0.0

    def test_measure_skips_empty_histories(self):
        d = np.array([[1e-12, 1e-7], [1e-7, 1.0]])
        assert decoherence_measure(d) == 0.0


# ═══════════════════════════════════════════════════════════════════
# Class operators and the decoherence functional
# ═══════════════════════════════════════════════════════════════════


class TestClassOperators:

    def test_heisenberg_projector_is_idempotent(self, field):
        once = heisenberg_projector(field, 0.3)
        twice = heisenberg_projector(once, 0.3)
        np.testing.assert_allclose(twice.values, once.values, atol=1e-10)

    def test_right_then_left(self, field):
        out = apply_class_operator(ClassOperatorSpec("cross_right", 0.5, 1.5), field)
        assert out.norm() == pytest.approx(1.0, abs=1e-6)
        assert out.t == pytest.approx(1.5)

    def test_left_then_right_is_empty(self, field):
        out = apply_class_operator(ClassOperatorSpec("cross_left", 0.5, 1.5), field)
        assert out.norm() < 1e-8

    def test_reference_time(self, field):
        out = apply_class_operator(ClassOperatorSpec("cross_interval", 0.0, 1.0), field, tau=2.0)
        assert out.t == pytest.approx(2.0)


class TestDecoherenceFunctional:

    @pytest.fixture
    def report(self, field):
        return decoherence_functional(crossing_specs([0.0, 1.0, 2.0]), field, workers=2)

    def test_candidate_probabilities_sum_to_one(self, report):
        assert np.sum(report.q_values) == pytest.approx(1.0, abs=1e-10)

    def test_functional_sums_to_one(self, report):
        assert np.real(np.sum(report.offdiag)) == pytest.approx(1.0, abs=1e-10)

    def test_candidate_matches_flux(self, packet, report):
        assert report.q_values[0] == pytest.approx(window_probability(packet, 0.0, 1.0), abs=1e-4)

    def test_crossing_split_at_arrival(self, report):
        assert report.probabilities[0] == pytest.approx(0.5, abs=0.02)
        assert report.probabilities[2] < 1e-6

    def test_decoherent(self, report):
        assert isinstance(report, DecoherenceReport)
        assert report.decoherent and not report.backflow
        assert report.decoherence_measure < dm2_straddling_estimate(GaussianPacket(0.0, -20.0, 1.0)) / 0.45

    def test_to_json(self, report):
        data = report.to_json()
        assert data["decoherent"] is True
        assert len(data["offdiag_abs"]) == 3

    def test_needs_specs(self, field):
        with pytest.raises(ConfigError):
            decoherence_functional([], field)

    def test_scan_shape(self, field):
        measures = decoherence_scan(field, 1.0, [0.2, 0.4], 0.0, 2.0)
        assert measures.shape == (2,)
        assert np.all(measures >= 0)


def random_field(rng):
    x_min, x_max, n = -40.0, 40.0, 2048
    x = x_min + np.arange(n) * (x_max - x_min) / n
    values = np.zeros(n, dtype=complex)
    for _ in range(3):
        packet = GaussianPacket(rng.uniform(-10, 10), rng.uniform(-6, 6), rng.uniform(0.7, 2.0))
        values += (rng.normal() + 1j * rng.normal()) * packet.amplitude(x)
    field = SpatialField(x_min, x_max, values)
    return field.with_values(values / np.sqrt(field.norm()))


class TestIdentities:

    def test_crossing_splits_into_one_way_crossings(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            field = random_field(rng)
            t1, t2 = np.sort(rng.uniform(-1.0, 2.0, 2))
            crossed = apply_class_operator(ClassOperatorSpec("cross_interval", t1, t2), field).values
            right = apply_class_operator(ClassOperatorSpec("cross_right", t1, t2), field).values
            left = apply_class_operator(ClassOperatorSpec("cross_left", t1, t2), field).values
            np.testing.assert_allclose(crossed, right - left, atol=1e-8)

    def test_exhaustive_set_sums_to_free_evolution(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            field = random_field(rng)
            specs = crossing_specs(np.sort(rng.uniform(0.0, 2.0, 4)))
            total = sum(apply_class_operator(s, field, tau=2.5).values for s in specs)
            np.testing.assert_allclose(total, free_evolve(field, 2.5).values, atol=1e-8)

    def test_backflow_window_is_flagged(self):
        state = backflow_witness_state()
        t1, t2, flux = find_backflow_window(state, -0.2, 0.2)
        field = SpatialField.from_state(state, -100.0, 100.0, 4096)
        report = decoherence_functional(crossing_specs([t1, t2, t2 + 0.5]), field)
        assert report.q_values[0] == pytest.approx(flux, abs=1e-5)
        assert report.backflow
        assert not report.decoherent
        assert report.to_json()["backflow"] is True


# ═══════════════════════════════════════════════════════════════════
# Recrossing bound
# ═══════════════════════════════════════════════════════════════════


class TestRecrossing:

    @pytest.fixture
    def centred(self):
        return GaussianPacket(0.0, -20.0, 1.0)

    @pytest.fixture
    def w0(self, centred):
        return PhaseSpaceField.gaussian(centred, np.linspace(-24.0, -16.0, 161), np.linspace(-6.0, 6.0, 1201))

    def test_sine_kernel_limits(self):
        assert sine_kernel(0.0) == pytest.approx(np.pi / 2)
        assert sine_kernel(-1e6) == pytest.approx(np.pi, abs=1e-5)
        assert sine_kernel(1e6) == pytest.approx(0.0, abs=1e-5)

    def test_wigner_route_matches_closed_form(self, centred, w0):
        assert wigner_sandwich(w0, 1.0, "dm2") == pytest.approx(dm2_straddling_estimate(centred), rel=0.05)

    def test_grid_route_matches_closed_form(self, centred):
        bound = dm2_bound(centred, 0.0, 1.0, n=16384)
        assert bound == pytest.approx(dm2_straddling_estimate(centred), rel=0.1)

    def test_p12_routes_agree(self, centred, w0):
        field = SpatialField.from_state(centred, -60.0, 60.0, 4096)
        assert wigner_sandwich(w0, 1.0, "p12") == pytest.approx(p12_sandwich(field, 0.0, 1.0), abs=1e-2)
        assert p12_sandwich(field, 0.0, 1.0) == pytest.approx(0.5, abs=1e-2)

    def test_bad_arguments(self, centred, w0):
        with pytest.raises(ConfigError):
            dm2_bound(centred, 1.0, 1.0)
        with pytest.raises(ConfigError):
            wigner_sandwich(w0, 1.0, "p21")
        with pytest.raises(ConfigError):
            wigner_sandwich(w0, 0.0)


# ═══════════════════════════════════════════════════════════════════
# Absorbing realization and two-sided crossings
# ═══════════════════════════════════════════════════════════════════


class TestAbsorbing:

    def test_nonconcross_starts_at_field_time(self, field):
        with pytest.raises(ConfigError):
            apply_class_operator(ClassOperatorSpec("nonconcross", 0.5, 1.0, v0=1.0), field)

    @pytest.mark.slow
    def test_absorbed_probabilities_close_to_sharp(self, field):
        sharp = decoherence_functional(crossing_specs([0.0, 1.0, 2.0]), field)
        soft = decoherence_functional(crossing_specs([0.0, 1.0, 2.0], v0=50.0, dt=2e-4), field)
        np.testing.assert_allclose(soft.probabilities[:2], sharp.probabilities[:2], atol=0.1)


class TestTwoSided:

    @pytest.fixture
    def pair(self):
        return mirror_pair(GaussianPacket(20.0, -20.0, 1.0))

    def test_both_sides_cross(self, pair):
        probs = crossing_probabilities_twosided(pair, [(0.0, 2.0)])
        assert probs[0] == pytest.approx(1.0, abs=1e-3)

    def test_reversed_interval(self, pair):
        with pytest.raises(ConfigError):
            crossing_probabilities_twosided(pair, [(1.0, 0.5)])

    @pytest.mark.parametrize("phase", [0.7, np.pi])
    def test_pair_doubles_single_crossing(self, phase):
        packet = GaussianPacket(20.0, -20.0, 1.0)
        base = crossing_probabilities_twosided(mirror_pair(packet), [(0.0, 1.0)])[0]
        shifted = crossing_probabilities_twosided(mirror_pair(packet, phase), [(0.0, 1.0)])[0]
        w0 = mirror_pair(packet).weights[0]
        assert shifted == pytest.approx(base, abs=1e-6)
        assert base == pytest.approx(2 * abs(w0) ** 2 * window_probability(packet, 0.0, 1.0), rel=0.03)

    def test_sector_functionals(self, pair):
        field = SpatialField.from_state(pair, -60.0, 60.0, 4096)
        report = twosided_decoherence(field, [0.0, 1.0, 2.0])
        assert set(report.sector_measures) == {"negative", "positive"}
        assert report.probabilities.shape == (2,)
        assert np.sum(report.q_values) == pytest.approx(1.0, abs=1e-3)
        assert report.decoherence_measure == max(report.sector_measures.values())
