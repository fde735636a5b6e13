import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

import srtrap as st
from srtrap.constants import EPS0, E_CHARGE
from srtrap.errors import CalibrationRangeError, DegenerateFitError
from srtrap.loading import (EBSource, LoadingModel, OvenSource, PhotoionBeam,
                            capacity, duty_squared, eb_composition, loading_curve,
                            oven_density, oven_pressure, oven_temperature,
                            peak_intensity, rate_scan, saturation_level,
                            scale_to_average_power, two_photon_rate)
from srtrap.trap import VolumeEstimate


def paper_beam(**kw):
    return PhotoionBeam(**kw)


def _envelope_integrals(shape, tau, n=400001, span=40.0):
    """Quadrature oracle for the normalized pulse envelope and its square."""
    t = np.linspace(-span * tau, span * tau, n)
    if shape == "gaussian":
        f = np.exp(-4 * math.log(2) * (t / tau) ** 2)
    else:
        t0 = tau / (2 * math.asinh(1.0))
        f = 1.0 / np.cosh(t / t0) ** 2
    return np.trapezoid(f, t), np.trapezoid(f * f, t)


class TestPeakIntensity:
    def test_paper_beam_value(self):
        # 0.15 nJ, 50 fs, 20 um: consistent with ~1 GW/cm^2 peak intensity
        i_pk = peak_intensity(paper_beam())
        assert i_pk == pytest.approx(4.485e8, rel=1e-3)
        assert 0.3e9 <= i_pk <= 1.5e9

    def test_linear_in_pulse_energy(self):
        b = paper_beam()
        b2 = paper_beam(pulse_energy=2 * b.pulse_energy)
        assert peak_intensity(b2) == pytest.approx(2 * peak_intensity(b), rel=1e-12)

    def test_waist_scaling(self):
        b = paper_beam()
        b2 = paper_beam(waist=2 * b.waist)
        assert peak_intensity(b2) == pytest.approx(peak_intensity(b) / 4, rel=1e-12)

    def test_shape_factor_against_quadrature(self):
        # P_peak * integral(envelope) must reproduce the pulse energy
        for shape in ("gaussian", "sech2"):
            b = paper_beam(pulse_shape=shape)
            from srtrap.loading import peak_power
            int_f, _ = _envelope_integrals(shape, b.pulse_duration_fwhm)
            assert peak_power(b) * int_f == pytest.approx(b.pulse_energy, rel=1e-6)


class TestDutySquared:
    def test_against_quadrature(self):
        for shape in ("gaussian", "sech2"):
            b = paper_beam(pulse_shape=shape)
            _, int_f2 = _envelope_integrals(shape, b.pulse_duration_fwhm)
            oracle = int_f2 * b.rep_rate
            assert duty_squared(b) == pytest.approx(oracle, rel=1e-6)

    def test_pulsed_vs_cw_enhancement(self):
        # at equal average intensity, <I^2> of the pulse train beats cw by
        # the inverse effective duty of the squared envelope (~1e5 here)
        b = paper_beam()
        int_f, int_f2 = _envelope_integrals("gaussian", b.pulse_duration_fwhm)
        t_rep = 1.0 / b.rep_rate
        mean_i = int_f / t_rep            # of the normalized envelope
        mean_i2 = int_f2 / t_rep
        enhancement = mean_i2 / mean_i**2
        assert enhancement == pytest.approx(1.33e5, rel=0.01)
        # the model reproduces the same value through its closed forms
        # (cw comparison at equal average intensity 2 P_avg / (pi w^2))
        r_pulsed = two_photon_rate(b, 1.0)
        i_avg = 2 * b.average_power / (math.pi * b.waist**2) / 1e4
        r_cw = b.rate_coefficient * 1.0 * i_avg**2
        assert r_pulsed / r_cw == pytest.approx(enhancement, rel=1e-4)


class TestTwoPhotonRate:
    @given(alpha=hst.floats(0.05, 20.0))
    @settings(max_examples=30, deadline=None)
    def test_exactly_quadratic_in_power(self, alpha):
        b = paper_beam()
        r1 = two_photon_rate(b, 1e11)
        r2 = two_photon_rate(scale_to_average_power(b, alpha * b.average_power), 1e11)
        assert r2 == pytest.approx(alpha**2 * r1, rel=1e-9)

    def test_zero_density(self):
        assert two_photon_rate(paper_beam(), 0.0) == 0.0

    def test_linear_in_density(self):
        b = paper_beam()
        assert two_photon_rate(b, 2e11) == pytest.approx(
            2 * two_photon_rate(b, 1e11), rel=1e-12)


class TestOven:
    def test_calibration_points(self):
        assert oven_temperature(OvenSource(current=0.8)) == pytest.approx(383.15)
        assert oven_temperature(OvenSource(current=1.2)) == pytest.approx(443.15)

    def test_out_of_range(self):
        with pytest.raises(CalibrationRangeError):
            oven_temperature(OvenSource(current=0.2))
        with pytest.raises(CalibrationRangeError):
            oven_density(OvenSource(current=1.5))

    def test_pressure_window(self):
        # 110-170 C must map into the expected 1e-13..1e-9 mbar window
        for current in (0.8, 1.2):
            p_mbar = oven_pressure(OvenSource(current=current)) / 100.0
            assert 1e-13 <= p_mbar <= 1e-9

    @given(i1=hst.floats(0.5, 1.29), di=hst.floats(0.005, 0.3))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_current(self, i1, di):
        i2 = min(i1 + di, 1.3)
        assert oven_density(OvenSource(current=i2)) > oven_density(OvenSource(current=i1))


class TestCapacity:
    def test_cold_fluid_density_example(self):
        # direct evaluation of n0 at nu_R = 400 kHz, nu_A = 20 kHz
        m = st.SR88.mass
        n0 = EPS0 * m * (2 * (2 * math.pi * 400e3) ** 2
                         + (2 * math.pi * 20e3) ** 2) / E_CHARGE**2
        assert n0 == pytest.approx(6.4e14, rel=0.01)

    def test_capacity_is_density_times_volume(self, geometry, drive, sr):
        vol = st.trap_volume(geometry, drive, sr)
        nu = st.secular_frequencies(st.mathieu_params(geometry, drive, sr), drive)
        n0 = EPS0 * sr.mass * (2 * (2 * math.pi * nu.nu_radial) ** 2
                               + (2 * math.pi * nu.nu_axial) ** 2) / sr.charge**2
        assert capacity(drive, geometry, sr, vol) == pytest.approx(
            n0 * vol.volume, rel=1e-12)

    def test_zero_volume(self, geometry, drive, sr):
        empty = VolumeEstimate(volume=0.0, depth=0.0, grid_resolution=1e-4)
        assert capacity(drive, geometry, sr, empty) == 0.0


class TestLoadingCurve:
    def test_zero_time(self):
        model = LoadingModel(rate_R=100.0, capacity_N=1e4, background_loss=1e-3)
        assert loading_curve(model, [0.0])[0] == 0.0

    def test_closed_form_without_loss(self):
        model = LoadingModel(rate_R=50.0, capacity_N=2e3, background_loss=0.0)
        t = np.linspace(0, 200, 7)
        expected = 2e3 * (1 - np.exp(-50.0 * t / 2e3))
        assert loading_curve(model, t) == pytest.approx(expected, rel=1e-12)
        assert saturation_level(model) == pytest.approx(2e3, rel=1e-12)

    @given(rate=hst.floats(1.0, 1e4), cap=hst.floats(10.0, 1e6),
           loss=hst.floats(0.0, 0.1))
    @settings(max_examples=40, deadline=None)
    def test_monotone_and_bounded(self, rate, cap, loss):
        model = LoadingModel(rate_R=rate, capacity_N=cap, background_loss=loss)
        t = np.linspace(0, 300, 50)
        n = loading_curve(model, t)
        assert np.all(np.diff(n) >= -1e-9)
        assert np.all(n <= saturation_level(model) * (1 + 1e-12))

    @given(rate=hst.floats(1.0, 1e3), cap=hst.floats(100.0, 1e5))
    @settings(max_examples=30, deadline=None)
    def test_saturation_monotone_in_inputs(self, rate, cap):
        loss = 1e-2
        base = saturation_level(LoadingModel(rate, cap, loss))
        more_rate = saturation_level(LoadingModel(rate * 2, cap, loss))
        more_cap = saturation_level(LoadingModel(rate, cap * 2, loss))
        assert more_rate >= base
        assert more_cap >= base


class TestEBComposition:
    def test_pure(self):
        src = EBSource(impurity_fraction=0.0)
        comp = eb_composition(src)
        assert comp == [(st.SR88, 1.0)]

    def test_fig4_fraction(self):
        imps = ((st.ion_species(60), 0.5), (st.ion_species(104), 0.5))
        src = EBSource(impurity_fraction=0.34, impurity_species=imps)
        comp = eb_composition(src)
        assert comp[0][1] == pytest.approx(0.66, rel=1e-12)

    @given(frac=hst.floats(0.0, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_weights_sum_to_one(self, frac):
        imps = ((st.ion_species(60), 0.25), (st.ion_species(104), 0.75))
        src = EBSource(impurity_fraction=frac, impurity_species=imps)
        total = sum(w for _, w in eb_composition(src))
        assert total == pytest.approx(1.0, rel=1e-12)


class TestRateScan:
    def test_model_exactly_quadratic(self):
        # fit the exponent of the noiseless model rates directly
        b = paper_beam()
        powers = np.linspace(6e-3, 18e-3, 6)
        rates = [two_photon_rate(scale_to_average_power(b, p), 1e11) for p in powers]
        slope = np.polyfit(np.log(powers), np.log(rates), 1)[0]
        assert slope == pytest.approx(2.0, abs=1e-9)

    def test_poisson_scan_recovers_exponent(self):
        b = paper_beam(rate_coefficient=5.033566389995806e-22)
        oven = OvenSource(current=1.0)
        res = rate_scan(b, np.linspace(6e-3, 18e-3, 6), oven_density(oven),
                        trials=20, load_window=1.0, rng=123)
        assert res.exponent == pytest.approx(2.0, abs=0.05)
        assert np.all(res.errors > 0)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            rate_scan(paper_beam(), [1e-3], 1e11, rng=0)

    def test_all_zero_counts(self):
        with pytest.raises(DegenerateFitError):
            rate_scan(paper_beam(), [1e-9, 2e-9, 3e-9, 4e-9], 1e-20, rng=0)
