import math

import pytest

import srtrap as st
from srtrap import kernels


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def geometry():
    return st.TrapGeometry()


@pytest.fixture(scope="session")
def drive():
    return st.DriveSettings(omega_rf=2 * math.pi * 2.5e6, v_rf=500.0, v_ec=500.0)


@pytest.fixture(scope="session")
def sr():
    return st.SR88
