import math

import pytest
from hypothesis import given, strategies as st

from sgbeam.constants import (AMU, CONSTANTS, GAUSS, cyclotron_frequency, kinetic_energy_to_speed,
                              larmor_frequency, speed_to_kinetic_energy)

M = CONSTANTS.ion_mass


def test_bohr_magneton_consistent():
    c = CONSTANTS
    assert c.bohr_magneton == pytest.approx(c.elementary_charge * c.reduced_planck / (2 * c.electron_mass), rel=1e-6)


def test_ion_mass_and_g():
    assert M == pytest.approx(39.96 * AMU)
    assert CONSTANTS.electron_g_factor == 2.00232


def test_speed_at_0p1_eV():
    assert kinetic_energy_to_speed(0.1, M) == pytest.approx(700, rel=0.02)


def test_speed_after_300V_extraction():
    assert kinetic_energy_to_speed(300, M) == pytest.approx(38e3, rel=0.02)


@pytest.mark.parametrize("e", [0.0, -1.0])
def test_speed_rejects_non_positive_energy(e):
    with pytest.raises(ValueError):
        kinetic_energy_to_speed(e, M)


def test_larmor_per_gauss():
    assert larmor_frequency(GAUSS) / (2 * math.pi) == pytest.approx(2.8e6, rel=0.01)
    assert larmor_frequency(100 * GAUSS) / (2 * math.pi) == pytest.approx(280e6, rel=0.01)
    assert larmor_frequency(0.0) == 0.0
    with pytest.raises(ValueError):
        larmor_frequency(-1e-4)


def test_cyclotron_per_gauss():
    assert cyclotron_frequency(GAUSS, M) / (2 * math.pi) == pytest.approx(38, rel=0.02)
    assert cyclotron_frequency(0.0, M) == 0.0
    with pytest.raises(ValueError):
        cyclotron_frequency(1e-4, 0.0)


def test_cyclotron_radius_scale():
    r = M * 700 / (CONSTANTS.elementary_charge * 20 * GAUSS)
    assert 0.05 < r < 0.3


@given(st.floats(1e-6, 1e4))
def test_energy_speed_round_trip(e):
    assert speed_to_kinetic_energy(kinetic_energy_to_speed(e, M), M) == pytest.approx(e, rel=1e-12)


@given(st.floats(1e-8, 1.0))
def test_larmor_cyclotron_ratio_independent_of_field(b):
    c = CONSTANTS
    expected = c.electron_g_factor * c.bohr_magneton * M / (c.reduced_planck * c.elementary_charge)
    assert larmor_frequency(b) / cyclotron_frequency(b, M) == pytest.approx(expected, rel=1e-12)


def test_with_g_factor():
    c2 = CONSTANTS.with_g_factor(2.0)
    assert c2.electron_g_factor == 2.0
    assert larmor_frequency(1e-4, c2) < larmor_frequency(1e-4)
