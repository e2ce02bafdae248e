import math

import pytest

from qfmcw.waveform import C_LIGHT, Family, ModulationConfig

WAVELENGTH0 = 1550e-9
DELTA_F = 100e9
PERIOD = 10e-6


def optical(family, t_origin=0.0):
    return ModulationConfig.from_optical(family, WAVELENGTH0, DELTA_F, PERIOD, t_origin)


@pytest.fixture
def triangle():
    return optical(Family.TRIANGLE)


@pytest.fixture
def sawtooth():
    return optical(Family.SAWTOOTH)


@pytest.fixture
def toy_sawtooth():
    return ModulationConfig(Family.SAWTOOTH, 2 * math.pi * 1e6, 2 * math.pi * 1e4, 1e-3, 0.0)


def rel(a, b):
    return abs(a - b) / abs(b)


__all__ = ["C_LIGHT", "optical", "rel"]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
