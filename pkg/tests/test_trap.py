import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

import srtrap as st
from srtrap.constants import AMU, E_CHARGE
from srtrap.errors import OutOfRegionError, UnstableParametersError
from srtrap.trap import Q_STABILITY_LIMIT, pseudo_coefficients

OMEGA = 2 * math.pi * 2.5e6


def drive_at(v_rf, v_ec=500.0):
    return st.DriveSettings(omega_rf=OMEGA, v_rf=v_rf, v_ec=v_ec)


# independent evaluation of the q formula with SI constants (oracle for the
# 500 V operating point)
Q_500V = 2 * E_CHARGE * 500.0 / (88 * AMU * 3.2e-3**2 * OMEGA**2)


class TestMathieuParams:
    def test_paper_point(self, geometry, drive, sr):
        p = st.mathieu_params(geometry, drive, sr)
        assert p.q_radial == pytest.approx(Q_500V, rel=1e-12)
        assert p.q_radial == pytest.approx(0.434, abs=5e-4)

    def test_zero_drive(self, geometry, sr):
        p = st.mathieu_params(geometry, drive_at(0.0), sr)
        assert p.q_radial == 0.0

    def test_laplace_constraint(self, geometry, drive, sr):
        p = st.mathieu_params(geometry, drive, sr)
        assert p.a_radial == -p.a_axial / 2

    @given(v=hst.floats(1.0, 1000.0))
    @settings(max_examples=25, deadline=None)
    def test_linear_in_voltage(self, v, geometry, sr):
        q1 = st.mathieu_params(geometry, drive_at(v), sr).q_radial
        q2 = st.mathieu_params(geometry, drive_at(2 * v), sr).q_radial
        assert q2 == pytest.approx(2 * q1, rel=1e-12)

    @given(scale=hst.floats(0.25, 8.0))
    @settings(max_examples=25, deadline=None)
    def test_inverse_in_mass(self, scale, geometry, drive, sr):
        heavy = st.ion_species(88 * scale)
        q1 = st.mathieu_params(geometry, drive, sr).q_radial
        q2 = st.mathieu_params(geometry, drive, heavy).q_radial
        assert q2 == pytest.approx(q1 / scale, rel=1e-12)


class TestSecularFrequencies:
    def test_radial_near_400khz(self, geometry, drive, sr):
        nu = st.secular_frequencies(st.mathieu_params(geometry, drive, sr), drive)
        assert abs(nu.nu_radial - 400e3) / 400e3 < 0.05

    def test_axial_calibration(self, geometry, drive, sr):
        kappa = st.calibrate_kappa(20e3, geometry, drive, sr)
        assert kappa == pytest.approx(1.44e-3, rel=1e-2)
        geo = st.TrapGeometry(kappa_axial=kappa)
        nu = st.secular_frequencies(st.mathieu_params(geo, drive, sr), drive)
        assert nu.nu_axial == pytest.approx(20e3, rel=1e-12)

    def test_radial_at_125v(self, geometry, sr):
        # a_radial neglected: nu scales linearly with v_rf through q
        drv = drive_at(125.0, v_ec=0.0)
        nu = st.secular_frequencies(st.mathieu_params(geometry, drv, sr), drv)
        oracle = (OMEGA / (4 * math.pi)) * (Q_500V * 125.0 / 500.0) / math.sqrt(2)
        assert nu.nu_radial == pytest.approx(oracle, rel=1e-12)
        assert nu.nu_radial == pytest.approx(96e3, rel=0.01)

    def test_unstable_raises(self, geometry, sr):
        drv = drive_at(1100.0)
        with pytest.raises(UnstableParametersError):
            st.secular_frequencies(st.mathieu_params(geometry, drv, sr), drv)

    @given(v_rf=hst.floats(50.0, 900.0))
    @settings(max_examples=25, deadline=None)
    def test_axial_independent_of_vrf(self, v_rf, geometry, sr):
        drv = drive_at(v_rf)
        nu = st.secular_frequencies(st.mathieu_params(geometry, drv, sr), drv)
        assert nu.nu_axial == pytest.approx(20e3, rel=1e-9)

    @given(scale=hst.floats(0.1, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_axial_sqrt_vec(self, scale, geometry, sr):
        base = drive_at(500.0, v_ec=200.0)
        nu1 = st.secular_frequencies(st.mathieu_params(geometry, base, sr), base)
        scaled = drive_at(500.0, v_ec=200.0 * scale)
        nu2 = st.secular_frequencies(st.mathieu_params(geometry, scaled, sr), scaled)
        assert nu2.nu_axial == pytest.approx(nu1.nu_axial * math.sqrt(scale), rel=1e-9)

    def test_mass_frequency_ratio(self, geometry):
        # resonance frequencies of two species scale inversely with mass
        # when the a-terms vanish
        drv = drive_at(100.0, v_ec=0.0)
        nu88 = st.secular_frequencies(st.mathieu_params(geometry, drv, st.SR88), drv)
        nu44 = st.secular_frequencies(
            st.mathieu_params(geometry, drv, st.ion_species(44)), drv)
        assert nu44.nu_radial == pytest.approx(2 * nu88.nu_radial, rel=1e-12)


class TestStability:
    def test_paper_point_stable(self, geometry, drive, sr):
        ok, margin = st.stability_check(st.mathieu_params(geometry, drive, sr))
        assert ok and margin > 0

    def test_radial_defocusing_only(self):
        p = st.MathieuParams(q_radial=0.0, a_radial=-1e-4, a_axial=2e-4)
        ok, margin = st.stability_check(p)
        assert not ok and margin < 0

    def test_boundary_voltage(self, geometry, sr):
        v_boundary = Q_STABILITY_LIMIT / Q_500V * 500.0
        assert v_boundary == pytest.approx(1046.0, abs=1.0)
        below = st.mathieu_params(geometry, drive_at(v_boundary - 0.5), sr)
        above = st.mathieu_params(geometry, drive_at(v_boundary + 0.5), sr)
        assert st.stability_check(below).stable
        assert not st.stability_check(above).stable

    def test_epsilon_at_q_limit(self):
        eps = 1e-6
        lo = st.MathieuParams(Q_STABILITY_LIMIT - eps, 0.0, 0.0)
        hi = st.MathieuParams(Q_STABILITY_LIMIT + eps, 0.0, 0.0)
        assert st.stability_check(lo).stable
        assert not st.stability_check(hi).stable


class TestInstantaneousForce:
    def test_zero_at_origin(self, geometry, drive, sr):
        for t in (0.0, 1e-7, 3.7e-7):
            f = st.instantaneous_force(np.zeros(3), t, geometry, drive, sr)
            assert np.all(f == 0.0)

    def test_linearity(self, geometry, drive, sr):
        pos = np.array([3e-4, -2e-4, 1e-3])
        f1 = st.instantaneous_force(pos, 1.3e-7, geometry, drive, sr)
        f2 = st.instantaneous_force(2 * pos, 1.3e-7, geometry, drive, sr)
        assert f2 == pytest.approx(2 * f1, rel=1e-12)

    def test_out_of_region(self, geometry, drive, sr):
        with pytest.raises(OutOfRegionError):
            st.instantaneous_force(np.array([geometry.r0, 0, 0]), 0.0,
                                   geometry, drive, sr)

    def test_time_average_micromotion_path(self, geometry, sr):
        # averaged along the first-order micromotion trajectory
        # x(t) = x0 (1 + (q/2) cos(w t)), the RF force reduces to the
        # secular restoring force -m (2 pi nu_R)^2 x0 (quadrature oracle)
        drv = drive_at(500.0 * 0.1 / Q_500V, v_ec=0.0)   # q = 0.1
        p = st.mathieu_params(geometry, drv, sr)
        assert p.q_radial == pytest.approx(0.1, rel=1e-12)
        nu = st.secular_frequencies(p, drv)
        x0 = 2e-4
        ts = np.linspace(0.0, 2 * math.pi / OMEGA, 4001)
        fx = []
        for t in ts:
            x = x0 * (1 + p.q_radial / 2 * math.cos(OMEGA * t))
            fx.append(st.instantaneous_force(np.array([x, 0, 0]), t,
                                             geometry, drv, sr)[0])
        mean_f = np.trapezoid(fx, ts) / (ts[-1] - ts[0])
        expected = -sr.mass * (2 * math.pi * nu.nu_radial) ** 2 * x0
        assert mean_f == pytest.approx(expected, rel=0.01)


class TestPseudopotential:
    def test_zero_at_origin(self, geometry, drive, sr):
        assert st.pseudopotential_energy(np.zeros(3), geometry, drive, sr) == 0.0

    def test_curvature_matches_secular(self, geometry, drive, sr):
        # same closed forms: agreement at the 1e-9 level required
        nu = st.secular_frequencies(st.mathieu_params(geometry, drive, sr), drive)
        c_r, c_z = pseudo_coefficients(geometry, drive, sr)
        assert c_r == pytest.approx(
            0.5 * sr.mass * (2 * math.pi * nu.nu_radial) ** 2, rel=1e-9)
        assert c_z == pytest.approx(
            0.5 * sr.mass * (2 * math.pi * nu.nu_axial) ** 2, rel=1e-9)

    def test_radial_defocusing_at_low_vrf(self, geometry, sr):
        # radial coefficient crosses zero where the RF focusing no longer
        # beats the end-cap defocusing; solve the threshold from the two
        # coefficient formulas directly
        qe = sr.charge
        a_coef = qe**2 / (4 * sr.mass * OMEGA**2 * geometry.r0**4)
        b_coef = qe * geometry.kappa_axial * 500.0 / (2 * geometry.z0**2)
        v_star = math.sqrt(b_coef / a_coef)
        assert 10.0 < v_star < 30.0
        c_lo, _ = pseudo_coefficients(geometry, drive_at(v_star * 0.8), sr)
        c_hi, _ = pseudo_coefficients(geometry, drive_at(v_star * 1.2), sr)
        assert c_lo < 0 < c_hi
        u = st.pseudopotential_energy(np.array([1e-4, 0, 0]), geometry,
                                      drive_at(v_star * 0.8), sr)
        assert u < 0


class TestTrapVolume:
    def test_positive_at_paper_point(self, geometry, drive, sr):
        est = st.trap_volume(geometry, drive, sr)
        assert est.volume > 0
        assert est.depth > 0

    def test_matches_ellipsoid_oracle(self, geometry, drive, sr):
        # independent geometric oracle: the sub-level set of the quadratic
        # pseudopotential below the boundary saddle is an ellipsoid
        c_r, c_z = pseudo_coefficients(geometry, drive, sr)
        depth = min(c_r * geometry.r0**2, c_z * geometry.z0**2)
        a_rho = math.sqrt(depth / c_r)
        a_z = math.sqrt(depth / c_z)
        oracle = 4 / 3 * math.pi * a_rho**2 * a_z
        est = st.trap_volume(geometry, drive, sr)
        assert est.volume == pytest.approx(oracle, rel=0.05)
        assert est.depth == pytest.approx(depth, rel=1e-9)

    def test_zero_below_radial_threshold(self, geometry, sr):
        est = st.trap_volume(geometry, drive_at(10.0), sr)
        assert est.volume == 0.0 and est.depth == 0.0

    def test_interior_maximum(self, geometry, sr):
        vs = np.linspace(50, 500, 16)
        vols = [st.trap_volume(geometry, drive_at(float(v)), sr,
                               resolution=geometry.r0 / 22).volume for v in vs]
        k = int(np.argmax(vols))
        assert 0 < k < len(vs) - 1
        assert vols[k] > vols[0] and vols[k] > vols[-1]

    def test_grid_convergence(self, geometry, drive, sr):
        coarse = st.trap_volume(geometry, drive, sr, resolution=geometry.r0 / 40)
        fine = st.trap_volume(geometry, drive, sr, resolution=geometry.r0 / 80)
        assert abs(fine.volume - coarse.volume) / fine.volume < 0.05

    def test_resolution_precondition(self, geometry, drive, sr):
        with pytest.raises(ValueError):
            st.trap_volume(geometry, drive, sr, resolution=geometry.r0 / 10)

    def test_unstable_raises(self, geometry, sr):
        with pytest.raises(UnstableParametersError):
            st.trap_volume(geometry, drive_at(1100.0), sr)

    def test_deterministic(self, geometry, drive, sr):
        a = st.trap_volume(geometry, drive, sr)
        b = st.trap_volume(geometry, drive, sr)
        assert a.volume == b.volume and a.depth == b.depth


class TestCalibrateKappa:
    def test_paper_value(self, geometry, drive, sr):
        kappa = st.calibrate_kappa(20e3, geometry, drive, sr)
        assert kappa == pytest.approx(1.44e-3, rel=5e-3)

    def test_quadratic_scaling(self, geometry, drive, sr):
        k1 = st.calibrate_kappa(20e3, geometry, drive, sr)
        k2 = st.calibrate_kappa(20e3 * math.sqrt(2), geometry, drive, sr)
        assert k2 == pytest.approx(2 * k1, rel=1e-12)

    @given(nu=hst.floats(5e3, 80e3))
    @settings(max_examples=20, deadline=None)
    def test_round_trip(self, nu, geometry, drive, sr):
        kappa = st.calibrate_kappa(nu, geometry, drive, sr)
        geo = st.TrapGeometry(kappa_axial=kappa)
        out = st.secular_frequencies(st.mathieu_params(geo, drive, sr), drive)
        assert out.nu_axial == pytest.approx(nu, rel=1e-12)
