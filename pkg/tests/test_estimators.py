import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from sgbeam.constants import CONSTANTS, ELECTRON_VOLT, larmor_frequency
from sgbeam.estimators import (beam_waist_from_emittance, hexapole_axis_field, hexapole_precession,
                               lorentz_broadening, lorentz_uncertainty_bound, quadrupole_splitting,
                               two_wire_gradient, two_wire_splitting)

M = CONSTANTS.ion_mass
ETA = 1e-9 * 1e-3 * math.sqrt(ELECTRON_VOLT)  # one nm mrad sqrt(eV) in SI


def test_two_wire_gradient():
    assert two_wire_gradient(0.1, 1e-6).value == pytest.approx(4.0e4, rel=0.01)
    assert two_wire_gradient(0.0, 1e-6).value == 0
    assert two_wire_gradient(0.1, 2e-6).value == pytest.approx(two_wire_gradient(0.1, 1e-6).value / 4)


def test_two_wire_splitting():
    r = two_wire_splitting(0.1, 1e-6, 100e-6, M, 700)
    assert r.value == pytest.approx(2.1e-3, rel=0.1)
    assert r.extra["delta_v"] == pytest.approx(r.value * 700)
    assert two_wire_splitting(0.1, 1e-6, 100e-6, M, 700, delta_s=0).value == 0
    assert two_wire_splitting(0.1, 1e-6, 100e-6, M, 1400).value == pytest.approx(r.value / 4)


def test_lorentz_broadening():
    r = lorentz_broadening(100e-6, M, 4e4, 25e-9, 700)
    assert r.value == pytest.approx(0.32e-3, rel=0.1)
    assert lorentz_broadening(100e-6, M, 4e4, 0.0, 700).value == 0
    # the speed cancels in the velocity spread
    assert lorentz_broadening(100e-6, M, 4e4, 25e-9).value == pytest.approx(r.extra["delta_v"])


def test_wire_pair_splitting_to_broadening_ratio():
    grad = two_wire_gradient(0.1, 1e-6).value
    ratio = two_wire_splitting(0.1, 1e-6, 100e-6, M, 700).value / lorentz_broadening(100e-6, M, grad, 25e-9, 700).value
    assert ratio == pytest.approx(6.6, rel=0.05)


def test_quadrupole_splitting():
    r = quadrupole_splitting(1e4, 100e-6, M, 700)
    assert 0.1e-3 <= r.value <= 0.4e-3
    assert quadrupole_splitting(1e4, 200e-6, M, 700).value == pytest.approx(2 * r.value)
    assert quadrupole_splitting(1e4, 100e-6, M, 1400).value == pytest.approx(r.value / 4)


def test_uncertainty_bound_electron_boundary():
    p = CONSTANTS.electron_mass * 1e5
    r = lorentz_uncertainty_bound(p, p, 1e4, CONSTANTS.electron_mass)
    assert r.extra["ratio"] == pytest.approx(1.0, rel=1e-12)
    assert not r.extra["resolvable"]


def test_uncertainty_bound_ion_prefactor():
    r = lorentz_uncertainty_bound(1.0, 1.0, 1e4, M)
    assert r.extra["ratio"] < 1e-3
    assert r.extra["resolvable"]


@given(st.floats(1e-3, 1e6))
def test_uncertainty_ratio_independent_of_gradient(g):
    a = lorentz_uncertainty_bound(1.0, 0.01, g, M)
    b = lorentz_uncertainty_bound(1.0, 0.01, 2 * g, M)
    assert a.extra["ratio"] == b.extra["ratio"]
    assert b.value == pytest.approx(2 * a.value)
    assert a.value / a.extra["sg_force"] == pytest.approx(a.extra["ratio"], rel=1e-12)


def test_uncertainty_bound_zero_gradient():
    r = lorentz_uncertainty_bound(1.0, 0.01, 0.0, M)
    assert r.value == 0 and r.extra["sg_force"] == 0


def test_beam_waist():
    e = 0.1 * ELECTRON_VOLT
    r = beam_waist_from_emittance(1.6 * ETA, e, 0.2e-3)
    assert r.value == pytest.approx(25e-9, rel=0.05)
    assert beam_waist_from_emittance(1.6 * ETA, e, 0.4e-3).value == pytest.approx(r.value / 2)
    assert math.sqrt(2.6) == pytest.approx(1.6, abs=0.02)


def test_hexapole_closed_form_matches_quadrature():
    a3, y0, v = -0.018, 75e-6, 700.0
    for L in (100e-6, 300e-6):
        num, _ = quad(lambda z: larmor_frequency(abs(hexapole_axis_field(a3, y0, z))) / v, 0, L,
                      epsabs=0, epsrel=1e-13)
        assert hexapole_precession(a3, y0, L, v).value == pytest.approx(num, rel=1e-6)


def test_hexapole_rotations():
    r = hexapole_precession(0.018, 75e-6, 300e-6, 700)
    assert r.extra["rotations"] >= 100
    assert 100 <= r.extra["rotations"] <= 1000
    assert hexapole_precession(0.0, 75e-6, 300e-6, 700).value == 0


@pytest.mark.parametrize("fn,args", [
    (two_wire_gradient, (0.1, 0.0)),
    (two_wire_splitting, (0.1, 1e-6, 1e-4, M, 0.0)),
    (quadrupole_splitting, (-1.0, 1e-4, M, 700)),
    (beam_waist_from_emittance, (ETA, 0.0, 1e-4)),
])
def test_domain_errors(fn, args):
    with pytest.raises(ValueError):
        fn(*args)


def test_report_serialises():
    d = two_wire_splitting(0.1, 1e-6, 100e-6, M, 700).to_dict()
    assert d["unit"] == "rad" and "delta_v" in d["extra"]
    assert "two-wire-splitting" in str(two_wire_splitting(0.1, 1e-6, 100e-6, M, 700))
