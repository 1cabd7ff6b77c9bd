import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgbeam.constants import CONSTANTS, ELECTRON_VOLT
from sgbeam.dynamics import IonState
from sgbeam.fields import (CompositeField, FieldDomainError, FieldSample, GratingFourierField, GratingParams,
                           MultipoleField, MultipoleParams, UniformField)
from sgbeam.forces import (NO_IMAGE, ImageParams, image_force, image_potential, lorentz_force, sg_force,
                           total_acceleration)

C = CONSTANTS
G_MUB = C.electron_g_factor * C.bohr_magneton
vec = st.tuples(*[st.floats(-1e3, 1e3)] * 3)


def test_quadrupole_force_at_origin():
    p = MultipoleParams(-1.3, 0.0, 0.0, 75e-6)
    fs = MultipoleField(p, None).sample((0, 0, 0))
    c2 = p.coefficients[0]
    S = np.array([0.3, -0.2, 0.4])
    F = sg_force(S, fs)
    assert np.allclose(F, G_MUB * c2 * np.array([S[1], S[0], 0.0]), rtol=1e-12)


def test_uniform_field_no_sg_force():
    fs = FieldSample(np.array([1e-3, 0, 0]), np.zeros((3, 3)))
    assert np.all(sg_force([0.5, 0, 0], fs) == 0)


@given(st.floats(0, 60e-6), st.floats(-1e-4, 1e-4), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_grating_single_harmonic_force_closed_form(y, z, sy, sz):
    p = GratingParams(1.0, 40e-6, 2e-6, 50e-6, n_max=1, b1_surface=360e-4)
    y = max(y, 1e-9)
    k, a = p.kappa, p.b1 * math.exp(-p.kappa * y)
    F = sg_force([0.2, sy, sz], GratingFourierField(p).sample((0, y, z)))
    expected = G_MUB * k * a * np.array([0.0, sz * math.cos(k * z) - sy * math.sin(k * z),
                                         sy * math.cos(k * z) + sz * math.sin(k * z)])
    assert np.allclose(F, expected, rtol=1e-10, atol=1e-40)


def test_lorentz_example():
    F = lorentz_force([0, 0, 700], [20e-4, 0, 0])
    assert np.allclose(F, [0, C.elementary_charge * 700 * 20e-4, 0], rtol=1e-15)


@given(vec, vec)
def test_lorentz_does_no_work(v, B):
    v, B = np.array(v), np.array(B) * 1e-4
    F = lorentz_force(v, B)
    # max-abs scales avoid underflow of |B|^2 for tiny fields
    scale = C.elementary_charge * np.abs(v).max() ** 2 * np.abs(B).max()
    assert abs(F @ v) <= 1e-14 * scale


def test_lorentz_parallel_is_zero():
    assert np.all(lorentz_force([0, 0, 3], [0, 0, 1e-3]) == 0)


def test_image_potential_at_10um():
    assert image_potential(10e-6) / ELECTRON_VOLT == pytest.approx(-36e-6, rel=0.02)


def test_image_scaling():
    assert image_potential(20e-6) == pytest.approx(image_potential(10e-6) / 2, rel=1e-14)
    assert image_force(20e-6)[1] == pytest.approx(image_force(10e-6)[1] / 4, rel=1e-14)


def test_image_acceleration_at_20um():
    # e^2 / (16 pi eps0 m y^2) evaluated by hand: 2.17e6 m/s^2
    a = abs(image_force(20e-6)[1]) / C.ion_mass
    expected = C.elementary_charge**2 / (16 * math.pi * C.vacuum_permittivity * C.ion_mass * (20e-6) ** 2)
    assert a == pytest.approx(expected, rel=1e-14)
    assert a == pytest.approx(2.17e6, rel=0.01)
    # comparable to the 20 G cyclotron term, which is what makes the bias matter
    assert 0.5 < a / (C.elementary_charge * 20e-4 / C.ion_mass * 700) < 1


def test_image_force_is_minus_gradient():
    h = 1e-9
    y = 15e-6
    fd = -(image_potential(y + h) - image_potential(y - h)) / (2 * h)
    assert image_force(y)[1] == pytest.approx(fd, rel=1e-6)


def test_image_domain_and_disabled():
    with pytest.raises(FieldDomainError):
        image_potential(0.0)
    with pytest.raises(FieldDomainError):
        image_force(1e-6, ImageParams(surface_height=2e-6))
    assert image_potential(-1.0, NO_IMAGE) == 0.0
    assert np.all(image_force(-1.0, NO_IMAGE) == 0)


def test_total_acceleration_pure_cyclotron():
    b0 = 20e-4
    s = IonState(0.0, [0, 1e-3, 0], [0, 0, 700], [0.5, 0, 0])
    a = total_acceleration(s, UniformField([b0, 0, 0]))
    w0 = C.elementary_charge * b0 / C.ion_mass
    assert np.allclose(a, [0, w0 * 700, 0], rtol=1e-14)


def test_total_acceleration_all_off():
    s = IonState(0.0, [0, 1e-3, 0], [0, 0, 700], [0.5, 0, 0])
    assert np.all(total_acceleration(s, UniformField([0, 0, 0])) == 0)


def test_launch_point_dominated_by_bias_lorentz(grating_model, image):
    th = 0.054
    s = IonState(0.0, [0, 243e-6, 0], [0, -700 * math.sin(th), 700 * math.cos(th)], [0.5, 0, 0])
    fs = grating_model.sample(s.r)
    lor = np.linalg.norm(lorentz_force(s.v, fs.B))
    sg = np.linalg.norm(sg_force(s.S, fs))
    im = np.linalg.norm(image_force(s.r[1], image))
    assert lor > 10 * max(sg, im)
