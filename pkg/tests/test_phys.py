"""Optical-physics formulas: frozen values, limits, and invariants."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnetsim.phys import (
    ChannelPhysics,
    ClockParams,
    DetectorParams,
    EPSParams,
    clock_misidentification_probability,
    detection_statistics,
    fit_raman_coeff,
    fringe_coincidences,
    hom_coincidences,
    load_profile,
    polarization_error,
    raman_noise_rate,
    teleportation_estimate,
    transmittance,
    visibility_from_noise,
)


class TestTransmittance:
    def test_zero_loss(self):
        assert transmittance(0.0) == 1.0

    def test_ten_db_is_ten_percent(self):
        assert transmittance(10.0) == pytest.approx(0.1)

    def test_deployed_span_value(self):
        # 45.6 km at 0.43 dB/km
        assert transmittance(45.6 * 0.43) == pytest.approx(0.010944, rel=1e-4)

    @given(st.floats(0, 60), st.floats(0, 60))
    @settings(max_examples=60, deadline=None)
    def test_multiplicative_and_monotone(self, a, b):
        assert transmittance(a + b) == pytest.approx(transmittance(a) * transmittance(b))
        if b > 1e-6:  # below float resolution the ratio rounds to 1
            assert transmittance(a + b) < transmittance(a) or transmittance(a) == 0.0


class TestRamanNoise:
    def channel(self, coeff=1.0, bw=100.0):
        return ChannelPhysics(raman_coeff=coeff, filter_bandwidth_ghz=bw)

    def test_zero_power(self):
        assert raman_noise_rate(None, self.channel()) == 0.0
        assert raman_noise_rate(-math.inf, self.channel()) == 0.0

    def test_formula_point(self):
        # 0 dBm = 1 mW at 100 GHz with unit coefficient
        assert raman_noise_rate(0.0, self.channel()) == pytest.approx(100.0)

    def test_bandwidth_factor_twenty(self):
        wide = raman_noise_rate(6.8, self.channel(bw=100.0))
        narrow = raman_noise_rate(6.8, self.channel(bw=5.0))
        assert wide / narrow == pytest.approx(20.0, abs=1e-9)

    @given(st.floats(-30, 20), st.floats(-30, 20))
    @settings(max_examples=50, deadline=None)
    def test_linear_in_milliwatts(self, p1, p2):
        c = self.channel(coeff=3.7)
        r1, r2 = raman_noise_rate(p1, c), raman_noise_rate(p2, c)
        mw1, mw2 = 10 ** (p1 / 10), 10 ** (p2 / 10)
        assert r1 * mw2 == pytest.approx(r2 * mw1, rel=1e-9)


class TestDetectionStatistics:
    def test_noiseless_limit_car_infinite(self):
        eps = EPSParams(pair_rate_cps=1e5)
        leg = ChannelPhysics(loss_db=0.0, coincidence_window_ns=1e-12)
        det = DetectorParams(efficiency=1.0, dark_rate_cps=0.0)
        stats = detection_statistics(eps, leg, leg, det, det)
        # window -> 0 keeps a sliver of accidentals; zero singles noise means
        # the exact zero-accidental sentinel needs zero rates:
        quiet = detection_statistics(EPSParams(pair_rate_cps=0.0), leg, leg, det, det)
        assert quiet.car == math.inf
        assert stats.car > 1e6

    def test_frozen_formula_point(self):
        # singles 1e4 each, window 0.5 ns, true coincidences 100/s
        eps = EPSParams(pair_rate_cps=1e4)
        leg = ChannelPhysics(loss_db=0.0, coincidence_window_ns=0.5)
        det = DetectorParams(efficiency=1.0, dark_rate_cps=0.0)
        stats = detection_statistics(eps, leg, leg, det, det)
        assert stats.singles_a == pytest.approx(1e4)
        assert stats.accidentals == pytest.approx(1e4 * 1e4 * 0.5e-9)  # 0.05
        by_hand = EPSParams(pair_rate_cps=100.0 / (1.0 * 1.0))
        # direct DERIVED point: singles 1e4/1e4 cps, true 100 -> car 2001
        singles = 1e4
        accidentals = singles * singles * 0.5e-9
        assert (100 + accidentals) / accidentals == pytest.approx(2001.0)

    def test_car_strictly_decreasing_in_launch_power(self):
        profile = load_profile("qlan2_coexist")
        leg_a, leg_b = profile.leg_pair()
        det_a, det_b = profile.detector_pair()
        cars = []
        for dbm in np.linspace(-10, 17, 20):
            stats = detection_statistics(profile.eps, leg_a, leg_b, det_a, det_b,
                                         launch_dbm_a=float(dbm))
            cars.append(stats.car)
        assert all(a > b for a, b in zip(cars, cars[1:]))


class TestFringe:
    def test_theta_zero_is_max(self):
        assert fringe_coincidences(0.0, 1000.0, 0.77) == pytest.approx(1000.0)

    def test_visibility_recovered_from_extremes(self):
        cmax = fringe_coincidences(0.0, 1000.0, 0.77)
        cmin = fringe_coincidences(math.pi / 4, 1000.0, 0.77)
        assert (cmax - cmin) / (cmax + cmin) == pytest.approx(0.77)

    def test_zero_visibility_flat(self):
        values = [fringe_coincidences(t, 500.0, 0.0) for t in np.linspace(0, math.pi, 7)]
        assert max(values) == pytest.approx(min(values))

    def test_sampled_scan_recovers_visibility_within_3_sigma(self):
        rng = np.random.default_rng(42)
        v_in, cmax = 0.77, 2e4
        angles = np.linspace(0, math.pi / 2, 32)
        counts = np.array([rng.poisson(fringe_coincidences(t, cmax, v_in))
                           for t in angles], dtype=float)
        c_max_est, c_min_est = counts.max(), counts.min()
        v_est = (c_max_est - c_min_est) / (c_max_est + c_min_est)
        # 3-sigma band from Poisson errors on the two extremes
        sigma = math.sqrt(c_max_est + c_min_est) / (c_max_est + c_min_est) * 2
        assert abs(v_est - v_in) < max(3 * sigma, 0.02)


class TestVisibilityFromNoise:
    def test_zero_accidentals_keeps_intrinsic(self):
        eps = EPSParams(pair_rate_cps=0.0)
        leg = ChannelPhysics()
        det = DetectorParams(efficiency=1.0)
        stats = detection_statistics(eps, leg, leg, det, det)
        assert visibility_from_noise(stats, 0.9) == 0.9

    def test_equal_accidentals_halve(self):
        from qnetsim.phys import DetectionStats
        stats = DetectionStats(1, 1, true_coinc=5.0, accidentals=5.0, car=2.0)
        assert visibility_from_noise(stats, 0.8) == pytest.approx(0.4)

    def test_calibrated_operating_point_regression(self):
        # Pinned once against the fitted Raman coefficient.
        profile = load_profile("qlan2_coexist")
        stats = detection_statistics(profile.eps, *profile.leg_pair(),
                                     *profile.detector_pair())
        v_eff = visibility_from_noise(stats, profile.intrinsic_visibility)
        assert v_eff == pytest.approx(0.77, abs=1e-6)
        assert 0.71 <= v_eff <= 0.80

    def test_fit_reproduces_pinned_coefficient(self):
        profile = load_profile("qlan2_coexist")
        fitted = fit_raman_coeff(profile, target_veff=0.77, at_power_dbm=6.8)
        assert fitted == pytest.approx(profile.legs["signal"].raman_coeff, rel=1e-12)

    @given(st.floats(0, 30), st.floats(0.1, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_never_exceeds_intrinsic(self, launch_dbm, intrinsic):
        profile = load_profile("qlan2_coexist")
        stats = detection_statistics(profile.eps, *profile.leg_pair(),
                                     *profile.detector_pair(), launch_dbm_a=launch_dbm)
        assert visibility_from_noise(stats, intrinsic) <= intrinsic + 1e-12


class TestHom:
    def test_dip_bottom(self):
        assert hom_coincidences(0.0, 1000.0, 0.9, 50.0) == pytest.approx(100.0)

    def test_far_from_dip(self):
        assert hom_coincidences(1e4, 1000.0, 0.9, 50.0) == pytest.approx(1000.0)

    def test_one_coherence_time(self):
        got = hom_coincidences(50.0, 1000.0, 0.9, 50.0)
        assert got == pytest.approx(1000.0 * (1 - 0.9 / math.e))

    @given(st.floats(-200, 200).filter(lambda t: abs(t) > 1e-6))
    @settings(max_examples=50, deadline=None)
    def test_unique_minimum_at_zero(self, tau):
        at_zero = hom_coincidences(0.0, 1000.0, 0.9, 50.0)
        assert hom_coincidences(tau, 1000.0, 0.9, 50.0) > at_zero


class TestPolarizationError:
    @pytest.mark.parametrize("angle,expected", [
        (0.0, 1.0), (math.pi / 2, 0.0), (math.pi / 6, 0.75)])
    def test_cos_squared(self, angle, expected):
        assert polarization_error(angle) == pytest.approx(expected, abs=1e-12)


class TestClockMisidentification:
    def test_zero_jitter(self):
        assert clock_misidentification_probability(ClockParams(sync_jitter_ps=0.0)) == 0.0

    def test_default_deployment_is_negligible(self):
        p = clock_misidentification_probability(ClockParams())  # 90 MHz, 5 ps
        assert p < 1e-12

    def test_half_bin_jitter_one_sigma_two_tail(self):
        clock = ClockParams(clock_rate_hz=9.0e7, sync_jitter_ps=0.5e12 / 9.0e7)
        p = clock_misidentification_probability(clock)
        assert p == pytest.approx(math.erfc(1 / math.sqrt(2)), rel=1e-12)
        assert p == pytest.approx(0.3173, abs=2e-4)

    def test_gaussian_tail_oracle(self):
        # Independent quadrature oracle: integrate the normal density outside the bin.
        from scipy.integrate import quad
        clock = ClockParams(clock_rate_hz=5.0e8, sync_jitter_ps=400.0)
        half_bin = 0.5e12 / clock.clock_rate_hz
        density = lambda x: math.exp(-x * x / (2 * 400.0 ** 2)) / (400.0 * math.sqrt(2 * math.pi))
        tail, _ = quad(density, half_bin, math.inf)
        assert clock_misidentification_probability(clock) == pytest.approx(2 * tail, rel=1e-7)

    def test_monotone_in_jitter(self):
        values = [clock_misidentification_probability(
            ClockParams(clock_rate_hz=1e9, sync_jitter_ps=j))
            for j in np.linspace(1, 2000, 50)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_monotone_in_bin_separation(self):
        values = [clock_misidentification_probability(
            ClockParams(clock_rate_hz=r, sync_jitter_ps=300.0))
            for r in np.linspace(1e8, 5e9, 20)]
        assert all(a < b for a, b in zip(values, values[1:]))


class TestTeleportation:
    def ideal(self, indist: float):
        eps = EPSParams(pair_rate_cps=90.0, indistinguishability=indist)
        legs = [ChannelPhysics(loss_db=0.0, coincidence_window_ns=0.5)] * 2
        dets = [DetectorParams(efficiency=1.0, dark_rate_cps=0.0, jitter_ps=0.0)] * 2
        return teleportation_estimate(eps, legs, dets, ClockParams(sync_jitter_ps=0.0))

    def test_perfect_photons_perfect_fidelity(self):
        assert self.ideal(1.0).fidelity_avg == pytest.approx(1.0, abs=1e-12)

    def test_distinguishable_photons_hit_classical_bound(self):
        assert self.ideal(0.0).fidelity_avg == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_calibrated_deployment_envelope(self):
        profile = load_profile("qlan1_teleport")
        legs = [profile.legs["qubit"], profile.legs["idler"], profile.legs["teleported"]]
        dets = [profile.detectors["qubit"], profile.detectors["idler"],
                profile.detectors["teleported"]]
        est = teleportation_estimate(profile.eps, legs, dets, profile.clock,
                                     profile.bsm_success_prob)
        assert 1.0 <= est.rate_hz <= 10.0
        assert est.fidelity_avg > 0.90

    @given(st.floats(0, 1), st.floats(0, 40), st.floats(0, 40),
           st.floats(0, 1e6), st.floats(0, 1e4))
    @settings(max_examples=100, deadline=None)
    def test_fidelity_never_below_half(self, indist, loss_a, loss_b, raman, dark):
        eps = EPSParams(pair_rate_cps=1e5, indistinguishability=indist)
        leg_a = ChannelPhysics(loss_db=loss_a, raman_coeff=raman, classical_launch_dbm=0.0)
        leg_b = ChannelPhysics(loss_db=loss_b)
        dets = [DetectorParams(efficiency=0.8, dark_rate_cps=dark)] * 2
        est = teleportation_estimate(eps, [leg_a, leg_b], dets, ClockParams())
        assert 0.5 <= est.fidelity_avg <= 1.0

    def test_monotone_in_indistinguishability_and_signal_fraction(self):
        fidelities = [self.ideal(i).fidelity_avg for i in np.linspace(0, 1, 11)]
        assert all(a < b for a, b in zip(fidelities, fidelities[1:]))
        eps = EPSParams(pair_rate_cps=1e5, indistinguishability=0.9)
        dets = [DetectorParams(efficiency=0.8, dark_rate_cps=100.0)] * 2
        leg_b = ChannelPhysics(loss_db=3.0)
        by_noise = [teleportation_estimate(
            eps, [ChannelPhysics(loss_db=10.0, raman_coeff=r, classical_launch_dbm=10.0),
                  leg_b], dets, ClockParams()).fidelity_avg
            for r in np.linspace(0, 1e4, 10)]
        assert all(a > b for a, b in zip(by_noise, by_noise[1:]))


class TestProfiles:
    def test_coexist_profile_span_loss(self):
        profile = load_profile("qlan2_coexist")
        assert profile.legs["signal"].loss_db == pytest.approx(19.6, abs=0.1)
        assert profile.legs["signal"].filter_bandwidth_ghz == 100.0
        assert profile.legs["signal"].coincidence_window_ns == 0.5
        assert profile.legs["signal"].classical_launch_dbm == 6.8

    def test_teleport_profile_clock(self):
        profile = load_profile("qlan1_teleport")
        assert profile.clock.clock_rate_hz == 9.0e7
        assert profile.clock.sync_jitter_ps == 5.0
        total_km = 22.0 + 11.0 + 11.0
        assert total_km == 44.0

    def test_unknown_profile(self):
        with pytest.raises(FileNotFoundError):
            load_profile("no_such_profile")
