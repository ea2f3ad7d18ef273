"""Shared test conditions.

The canonical single-crystal benchmark used throughout: matched 80 kHz
spin locks, coupling d = 2*pi*2.5 kHz, 2 kHz spinning (rotor period
500 us).  The powder benchmark: a 1H-13C pair at 1.09 Angstrom spun at
5 kHz with 1/R = 290.8 us, 1/R1 = 137.9 us, T1rho = 1.867 ms.
"""

import math

import pytest

from cpmas.core import CouplingParams, Orientation, RfScheme, SpinningParams

KHZ = 2.0 * math.pi * 1e3


@pytest.fixture
def matched_rf():
    return RfScheme(omega1_i=80.0 * KHZ, omega1_s=80.0 * KHZ)


@pytest.fixture
def bench_coupling():
    return CouplingParams(d=2.5 * KHZ)


@pytest.fixture
def slow_mas():
    return SpinningParams(omega_r=2.0 * KHZ)


@pytest.fixture
def bench_orientation():
    return Orientation(beta=math.pi / 3, gamma=math.pi / 5)
