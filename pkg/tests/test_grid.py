import numpy as np
import pytest

from vsdr import ModelParameters
from vsdr.grid import grid_derivatives, steady_state_frequency, terminal_voltage

P = ModelParameters()
GP, B, EL = P.grid, P.bases, P.electrical


def test_nominal_equilibrium():
    dp, ddw, dth = grid_derivatives(1.0, 0.0, 0.75, 0.25, 1.0, GP, B)
    assert dp == 0.0 and ddw == 0.0 and dth == pytest.approx(314.16)


def test_load_step_swing():
    _, ddw, _ = grid_derivatives(1.0, 0.0, 0.89, 0.01, 1.0, GP, B)
    assert ddw == pytest.approx(0.1)


def test_governor_steady_state():
    dw = 2e-3
    p_m = 1.0 - dw / GP.d_p
    p_l = p_m
    dp, ddw, _ = grid_derivatives(p_m, dw, p_l, 0.0, 1.0, GP, B)
    assert dp == pytest.approx(0, abs=1e-12) and ddw == 0.0


def test_terminal_voltage():
    assert terminal_voltage(0, 0, 0.2, 0.2, EL) == pytest.approx((1.41, 0.0))
    assert terminal_voltage(1, 0, 0.0, 0.0, EL) == pytest.approx((1.41, -0.15))
    v = terminal_voltage(0, 0, np.pi / 2, 0.0, EL)
    assert v[0] == pytest.approx(0, abs=1e-15) and v[1] == pytest.approx(1.41)


def test_steady_state_frequency():
    assert steady_state_frequency(-0.1, 0.05, 20, 0.02) == pytest.approx(0.1 / 51, rel=1e-12)
    assert steady_state_frequency(-0.1, 0.0, 20, 0.02) == pytest.approx(2e-3, rel=1e-12)
    assert steady_state_frequency(0.0, 0.05, 20, 0.02) == 0.0
    with pytest.raises(ValueError):
        steady_state_frequency(-0.1, 0.05, 20, 0.0)
    with pytest.raises(ZeroDivisionError):
        steady_state_frequency(-0.1, -1.0, 50, 0.02)
