import math

import pytest
from hypothesis import settings

from sgbeam.adiabatic import AdiabaticParams
from sgbeam.constants import CONSTANTS
from sgbeam.fields import CompositeField, GratingFourierField, GratingParams, UniformField
from sgbeam.forces import ImageParams

# first calls pay the numba compile or cache load
settings.register_profile("sgbeam", deadline=None)
settings.load_profile("sgbeam")

# grating, bias and launch used for the reflected-beam runs
GRATING = GratingParams(current=1.0, width=40e-6, thickness=2e-6, pitch=50e-6, b1_surface=360e-4)
BIAS = 20e-4
SPEED = 700.0
INCIDENCE = 0.054
LAUNCH_HEIGHT = 243.0796182995434e-6  # spin-neutral averaged turning point at 20 um


@pytest.fixture(scope="session")
def grating():
    return GRATING


@pytest.fixture(scope="session")
def grating_model():
    return CompositeField([UniformField([BIAS, 0.0, 0.0]), GratingFourierField(GRATING)])


@pytest.fixture(scope="session")
def image():
    return ImageParams()


@pytest.fixture(scope="session")
def adiabatic_params():
    return AdiabaticParams.for_grating(GRATING, BIAS, SPEED * math.cos(INCIDENCE), 0.5, CONSTANTS)
