import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from conftest import BIAS, GRATING, INCIDENCE, LAUNCH_HEIGHT, SPEED
from sgbeam.adiabatic import (ADIABATICITY_LIMIT, AdiabaticParams, UnreachableTargetError, adiabatic_spin,
                              adiabaticity, averaged_accel_terms, averaged_accel_y, crash_bias_minimum,
                              effective_potential, effective_precession, integrate_adiabatic,
                              launch_height_for_turning_point, transverse_wiggle_amplitude, turning_point)
from sgbeam.constants import CONSTANTS, GAUSS
from sgbeam.dynamics import IntegratorOptions, IonState, Status, integrate
from sgbeam.fields import FieldDomainError, GratingFourierField, GratingParams
from sgbeam.forces import NO_IMAGE, ImageParams

C = CONSTANTS
E, M = C.elementary_charge, C.ion_mass
G_MUB = C.electron_g_factor * C.bohr_magneton
VZ0 = SPEED * math.cos(INCIDENCE)
COEF = E**2 / (16 * math.pi * C.vacuum_permittivity)


def test_fig4_frequencies(adiabatic_params):
    p = adiabatic_params
    two_pi = 2 * math.pi
    assert p.Omega0 / two_pi == pytest.approx(56e6, rel=0.01)
    assert p.kappa * p.vz0 / two_pi == pytest.approx(7e6, rel=0.01)
    assert p.doppler_shifted_bias / two_pi == pytest.approx(49e6, rel=0.01)
    ot, axis = effective_precession(20e-6, p)
    b1 = 360e-4 * math.exp(-p.kappa * 20e-6)
    ref = math.hypot(p.doppler_shifted_bias, C.gyromagnetic_ratio * b1)
    assert ot == pytest.approx(ref, rel=1e-12)
    assert ot / two_pi == pytest.approx(291.3e6, rel=1e-3)
    assert np.linalg.norm(axis) == pytest.approx(1.0)


def test_precession_limits(adiabatic_params):
    p = adiabatic_params
    ot, axis = effective_precession(5e-3, p)
    assert ot == pytest.approx(abs(p.doppler_shifted_bias), rel=1e-12)
    assert np.allclose(axis, [1, 0, 0], atol=1e-12)
    # height where the grating term equals the Doppler-shifted bias
    y45 = math.log(p.Omega1 / p.doppler_shifted_bias) / p.kappa
    ot, axis = effective_precession(y45, p)
    assert ot == pytest.approx(math.sqrt(2) * p.doppler_shifted_bias, rel=1e-12)
    assert axis[0] == pytest.approx(axis[2], rel=1e-12)


def test_adiabatic_spin(adiabatic_params):
    p = adiabatic_params
    assert np.allclose(adiabatic_spin(5e-3, p), [0.5, 0, 0], atol=1e-12)
    s_up = adiabatic_spin(20e-6, p)
    s_dn = adiabatic_spin(20e-6, p.with_spin(-0.5))
    assert np.allclose(s_up, -s_dn)
    ot, _ = effective_precession(20e-6, p)
    assert s_up[2] / 0.5 == pytest.approx(p.Omega1 * math.exp(-p.kappa * 20e-6) / ot, rel=1e-12)


def test_wiggle_amplitude(adiabatic_params):
    p = adiabatic_params
    # e * 102.5 G / m / kappa by hand
    expected = E * 360 * GAUSS * math.exp(-p.kappa * 20e-6) / M / p.kappa
    assert transverse_wiggle_amplitude(20e-6, p) == pytest.approx(expected, rel=1e-12)
    assert transverse_wiggle_amplitude(20e-6, p) == pytest.approx(0.394, rel=0.01)
    assert transverse_wiggle_amplitude(20e-6, p) < 1e-3 * VZ0
    assert transverse_wiggle_amplitude(5e-3, p) < 1e-100


def test_wiggle_matches_full_vx(adiabatic_params):
    p = adiabatic_params
    y = 20e-6
    w = transverse_wiggle_amplitude(y, p)
    # grating only, image off, level flight for a few Doppler periods
    s = IonState(0.0, [0, y, 0], [-w, 0, VZ0], [0.5, 0, 0])
    tr = integrate(s, GratingFourierField(GRATING), NO_IMAGE,
                   IntegratorOptions(t_max=0.5e-6, y_min=None, record_stride=1))
    vx = tr.states[:, 3]
    assert np.ptp(tr.states[:, 1]) < 1e-6
    assert 0.5 * np.ptp(vx) == pytest.approx(w, rel=0.1)


def test_accel_terms_closed_form(adiabatic_params):
    p = adiabatic_params
    for y in (12e-6, 20e-6, 35e-6):
        t = averaged_accel_terms(y, VZ0, p)
        ot, _ = effective_precession(y, p)
        e1 = math.exp(-p.kappa * y)
        assert t.cyclotron == pytest.approx(p.omega0 * VZ0, rel=1e-14)
        assert t.image == pytest.approx(-COEF / (M * y * y), rel=1e-12)
        assert t.ponderomotive == pytest.approx(p.omega1**2 * e1**2 / (2 * p.kappa), rel=1e-12)
        sg = p.u * p.omega1 * e1 * (p.Omega1 * e1 / ot) * p.spin_sign
        assert t.stern_gerlach == pytest.approx(sg, rel=1e-12)
        assert t.total == pytest.approx(sum(t.as_tuple()))


def test_far_field_is_pure_cyclotron(adiabatic_params):
    a = averaged_accel_y(5e-3, VZ0, adiabatic_params, NO_IMAGE)
    assert a == pytest.approx(adiabatic_params.omega0 * VZ0, rel=1e-12)


@given(st.floats(5e-6, 80e-6))
def test_only_sg_term_flips_with_spin(y):
    p = AdiabaticParams.for_grating(GRATING, BIAS, VZ0, 0.5)
    a = averaged_accel_terms(y, VZ0, p)
    b = averaged_accel_terms(y, VZ0, p.with_spin(-0.5))
    assert a.stern_gerlach == -b.stern_gerlach
    assert a.as_tuple()[:3] == b.as_tuple()[:3]


@given(st.floats(4e-6, 100e-6))
def test_force_is_minus_gradient_of_potential(y):
    # the averaged force written as a sum of terms equals w0 v_z - dU/dy
    p = AdiabaticParams.for_grating(GRATING, BIAS, VZ0, -0.5)
    h = 1e-3 * y
    dU = (-effective_potential(y + 2 * h, p) + 8 * effective_potential(y + h, p)
          - 8 * effective_potential(y - h, p) + effective_potential(y - 2 * h, p)) / (12 * h)
    t = averaged_accel_terms(y, VZ0, p)
    assert t.total == pytest.approx(p.omega0 * VZ0 - dU, rel=1e-7, abs=1e-9 * abs(t.cyclotron))


def test_sg_average_from_spin_only_motion(adiabatic_params):
    # lab-frame spin flying level at fixed y, started on the adiabatic state
    p = adiabatic_params
    y = 20e-6
    a = GRATING.b1 * math.exp(-p.kappa * y)
    k, v = p.kappa, p.vz0
    gamma = C.gyromagnetic_ratio

    def spin_rhs(t, S):
        z = v * t
        B = np.array([BIAS, -a * math.sin(k * z), a * math.cos(k * z)])
        return -gamma * np.cross(S, B)

    period = 2 * math.pi / (k * v)
    n = 20
    t_eval = np.linspace(0, n * period, 20 * 400 + 1)
    sol = solve_ivp(spin_rhs, (0, n * period), adiabatic_spin(y, p), method="DOP853", rtol=1e-11, atol=1e-13,
                    t_eval=t_eval)
    z = v * sol.t
    Sy, Sz = sol.y[1], sol.y[2]
    fy = G_MUB * k * a * (Sz * np.cos(k * z) - Sy * np.sin(k * z)) / M
    avg = np.trapezoid(fy, sol.t) / sol.t[-1]
    assert avg == pytest.approx(averaged_accel_terms(y, v, p).stern_gerlach, rel=1e-3)


def test_turning_point_matches_integration(adiabatic_params, image):
    opts = IntegratorOptions(z_max=20e-3, t_max=60e-6)
    for s in (0.5, -0.5):
        p = adiabatic_params.with_spin(s)
        vy = -SPEED * math.sin(INCIDENCE)
        tp = turning_point(LAUNCH_HEIGHT, vy, VZ0, p, image)
        tr = integrate_adiabatic([LAUNCH_HEIGHT, vy, VZ0], p, image, opts)
        assert tr.status == Status.CompletedWindow
        assert tr.closest_approach == pytest.approx(tp, rel=1e-6)


def test_spin_neutral_launch_height(adiabatic_params, image):
    p0 = adiabatic_params.with_spin(0.0)
    h = launch_height_for_turning_point(20e-6, SPEED, INCIDENCE, p0, image)
    assert h == pytest.approx(LAUNCH_HEIGHT, rel=1e-9)
    vy = -SPEED * math.sin(INCIDENCE)
    assert turning_point(h, vy, VZ0, p0, image) == pytest.approx(20e-6, rel=1e-9)


def test_attracted_spin_turns_lower(adiabatic_params, image):
    vy = -SPEED * math.sin(INCIDENCE)
    up = turning_point(LAUNCH_HEIGHT, vy, VZ0, adiabatic_params.with_spin(0.5), image)
    dn = turning_point(LAUNCH_HEIGHT, vy, VZ0, adiabatic_params.with_spin(-0.5), image)
    assert dn < 20e-6 < up


def test_unreachable_target_names_inequality(image):
    weak = AdiabaticParams.for_grating(GRATING, 10 * GAUSS, VZ0, 0.0)
    with pytest.raises(UnreachableTargetError, match="e\\*v_z\\*B0"):
        launch_height_for_turning_point(10e-6, SPEED, INCIDENCE, weak, image)


def test_crash_bias_minimum():
    assert crash_bias_minimum(700, 30e-6) == pytest.approx(crash_bias_minimum(700, 15e-6) / 4)
    b = crash_bias_minimum(700, 20e-6)
    assert E * 700 * b == pytest.approx(COEF / (20e-6) ** 2, rel=1e-14)
    with pytest.raises(ValueError):
        crash_bias_minimum(0.0, 1e-5)


@pytest.mark.parametrize("factor,status", [(1.02, Status.CompletedWindow), (0.98, Status.Crashed)])
def test_crash_boundary(factor, status):
    # bias alone against the image force, starting at rest vertically at 16 um
    y = 16e-6
    b0 = factor * crash_bias_minimum(VZ0, y)
    p = AdiabaticParams.from_fields(b0, 0.0, GRATING.kappa, VZ0, 0.5)
    tr = integrate_adiabatic([y, 0.0, VZ0], p, ImageParams(), IntegratorOptions(z_max=20e-3, t_max=60e-6))
    assert tr.status == status


def test_cyclotron_circle_without_grating():
    p = AdiabaticParams.from_fields(BIAS, 0.0, GRATING.kappa, VZ0, 0.5)
    tr = integrate_adiabatic([1e-3, -30.0, VZ0], p, NO_IMAGE, IntegratorOptions(t_max=2e-4, y_min=None))
    speed2 = tr.states[:, 1] ** 2 + tr.states[:, 2] ** 2
    assert np.abs(speed2 / speed2[0] - 1).max() < 1e-9


def test_adiabaticity_monitor(adiabatic_params, image):
    tr = integrate_adiabatic([LAUNCH_HEIGHT, -SPEED * math.sin(INCIDENCE), VZ0], adiabatic_params, image,
                             IntegratorOptions(z_max=20e-3, t_max=60e-6))
    assert tr.diagnostics["adiabatic_ok"]
    assert tr.diagnostics["adiabaticity"] < ADIABATICITY_LIMIT
    assert adiabaticity(20e-6, 0.0, adiabatic_params) == 0.0


def test_reduced_table(adiabatic_params, image):
    tr = integrate_adiabatic([LAUNCH_HEIGHT, -SPEED * math.sin(INCIDENCE), VZ0], adiabatic_params, image,
                             IntegratorOptions(z_max=20e-3, t_max=60e-6))
    table = tr.table()
    assert table.shape[1] == 9
    assert tr.final[3] == pytest.approx(20e-3, abs=1e-12)


def test_domain_errors(adiabatic_params):
    with pytest.raises(FieldDomainError):
        averaged_accel_y(0.0, VZ0, adiabatic_params)
    with pytest.raises(FieldDomainError):
        effective_potential(-1e-6, adiabatic_params)
    with pytest.raises(ValueError):
        AdiabaticParams.for_grating(GRATING, BIAS, VZ0, 0.7)


def test_raised_surface_shifts_everything():
    lifted = GratingParams(1.0, 40e-6, 2e-6, 50e-6, surface_height=5e-6, b1_surface=360e-4)
    p0 = AdiabaticParams.for_grating(GRATING, BIAS, VZ0, 0.5)
    p1 = AdiabaticParams.for_grating(lifted, BIAS, VZ0, 0.5)
    a0 = averaged_accel_terms(20e-6, VZ0, p0, ImageParams())
    a1 = averaged_accel_terms(25e-6, VZ0, p1, ImageParams(surface_height=5e-6))
    assert np.allclose(a0.as_tuple(), a1.as_tuple(), rtol=1e-12)
