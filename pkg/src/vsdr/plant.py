"""Physical device dynamics: compressor, compartment, BLDC, AC side and DC link.

All functions are pure and work on scalars or numpy arrays.  Device electrical
and mechanical quantities are per-unit on the device base; temperatures are
in degrees Celsius.
"""
from __future__ import annotations

import numpy as np

from .params import BldcParams, ElectricalParams, PerUnitBases, ThermalParams

#: below this DC-link voltage the converter power balance is rejected
V_DC_MIN = 0.1


class SingularOperatingPoint(ArithmeticError):
    """The DC-link voltage collapsed below :data:`V_DC_MIN`."""


def compressor_steady_state(w_m, th: ThermalParams):
    """Steady-state removed heat and compressor torque at speed ``w_m`` (pu of rated speed)."""
    q_th0 = th.a2 * w_m**2 + th.a1 * w_m + th.a0
    t_c0 = th.b1 * np.exp(th.b2 * w_m) + th.b3 * np.exp(th.b4 * w_m)
    return q_th0, t_c0


def compressor_steady_state_slope(w_m, th: ThermalParams):
    """d q_th0 / d w_m and d t_c0 / d w_m."""
    dq = 2 * th.a2 * w_m + th.a1
    dt = th.b1 * th.b2 * np.exp(th.b2 * w_m) + th.b3 * th.b4 * np.exp(th.b4 * w_m)
    return dq, dt


def compressor_derivatives(q_th, t_c, w_m, th: ThermalParams):
    q_th0, t_c0 = compressor_steady_state(w_m, th)
    return (q_th0 - q_th) / th.tau_q, (t_c0 - t_c) / th.tau_c


def compartment_derivative(T_f, q_th, th: ThermalParams, T_a=None):
    """Compartment temperature rate in K/s.  ``T_a`` defaults to the parameter value."""
    T_a = th.T_a if T_a is None else T_a
    return (T_a - T_f) / (th.r_th * th.c_th) - q_th / th.c_th


def bldc_derivatives(i_m, w_m, v_m2, t_c, bl: BldcParams, bases: PerUnitBases):
    di_m = bases.w_b / bl.l_a * (v_m2 - bl.r_a * i_m - bl.k_e * w_m)
    dw_m = (bl.k_t * i_m - t_c - bl.b * w_m) / (2 * bl.H_m)
    return di_m, dw_m


def electrical_derivatives(i_d, i_q, v_d, v_q, m_d, m_q, v_dc, w_g,
                           el: ElectricalParams, bases: PerUnitBases):
    """Terminal current dynamics in the synchronous frame, split into d/q parts."""
    wb = bases.w_b
    g = wb / el.l_s
    di_d = w_g * wb * i_q + g * (v_d - m_d * v_dc - el.r_s * i_d)
    di_q = -w_g * wb * i_d + g * (v_q - m_q * v_dc - el.r_s * i_q)
    return di_d, di_q


def inverter_dc_current(v_m2, i_m, v_dc):
    """DC-side inverter current from the lossless power balance."""
    if np.any(np.asarray(v_dc) < V_DC_MIN):
        raise SingularOperatingPoint(f"v_dc = {v_dc!r} below {V_DC_MIN} pu")
    return v_m2 * i_m / v_dc


def dclink_derivative(m_d, m_q, i_d, i_q, i_dc2, el: ElectricalParams,
                      bases: PerUnitBases, factor: float = 1.5):
    """DC-link voltage rate.

    ``factor`` multiplies the rectifier-side injection.  3/2 is the
    three-phase dq convention; with single-phase peak-value phasors the
    lossless power balance needs 1/2 (see ``Options.dclink_factor``).
    """
    g = bases.w_b / el.c_dc
    return factor * g * (m_d * i_d + m_q * i_q) - g * i_dc2
