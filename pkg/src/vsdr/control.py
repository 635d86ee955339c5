"""Controller laws of the VSDR unit.

Continuous-time PI loops, each returning its output together with the
derivative of its integrator state.  PWM is ideal, so the references
returned here are the quantities applied to the converters.
"""
from __future__ import annotations

import numpy as np

from .params import ControlGains, ElectricalParams, Options, PerUnitBases


def inverter_control(w_m, w_m_ref, i_m, mu_wm, mu_im, v_dc, g: ControlGains):
    """Cascaded speed / motor-current PI of the inverter.

    Returns ``(i_m_ref, v_m2, dmu_wm, dmu_im)``.  The error convention is
    measurement minus reference, as in the original control law.
    """
    i_m_ref = i_m + g.k_ps * (w_m - w_m_ref) + g.k_is * mu_wm
    v_m2 = v_dc + g.k_pc2 * (i_m - i_m_ref) + g.k_ic2 * mu_im
    return i_m_ref, v_m2, w_m - w_m_ref, i_m - i_m_ref


def rectifier_voltage_control(v_dc, v_dc_ref, mu_v, g: ControlGains):
    i_d_ref = g.k_pv * (v_dc_ref - v_dc) + g.k_iv * mu_v
    return i_d_ref, v_dc_ref - v_dc


def dq_current_control(i_d, i_q, i_d_ref, i_q_ref, mu_c_d, mu_c_q, v_dc_ref, w_hat,
                       g: ControlGains, el: ElectricalParams):
    """Decoupling terminal-current PI; returns ``(m_d, m_q, dmu_c_d, dmu_c_q)``."""
    dec = el.l_s * w_hat / v_dc_ref
    m_d = -g.k_pc1 * (i_d_ref - i_d) - g.k_ic1 * mu_c_d + dec * i_q
    m_q = -g.k_pc1 * (i_q_ref - i_q) - g.k_ic1 * mu_c_q - dec * i_d
    return m_d, m_q, i_d_ref - i_d, i_q_ref - i_q


def pll_frequency(v_pll_q, mu_pll, w_0, g: ControlGains):
    return g.k_p_pll * v_pll_q + g.k_i_pll * mu_pll + w_0


def sogi_pll_step(theta_g, theta_hat, v_pll_q, mu_pll, w_g, w_0,
                  g: ControlGains, bases: PerUnitBases):
    """Small-signal SOGI-PLL.

    The SOGI bandwidth uses the grid frequency in rad/s (``w_g * w_b``).
    Returns ``(dv_pll_q, w_hat, dmu_pll, dtheta_hat)``.
    """
    dv = 0.5 * g.k * w_g * bases.w_b * (theta_g - theta_hat - v_pll_q)
    w_hat = pll_frequency(v_pll_q, mu_pll, w_0, g)
    return dv, w_hat, v_pll_q, w_hat * bases.w_b


def temperature_reference(T_f, T_f_ref, mu_T, g: ControlGains):
    return g.k_pT * (T_f_ref - T_f) + g.k_iT * mu_T, T_f_ref - T_f


def terminal_power(v_d, v_q, i_d, i_q):
    return 0.5 * (v_d * i_d + v_q * i_q)


def droop_power_reference(w_hat, w_0, p_t0, g: ControlGains, opts: Options):
    dev = w_hat - w_0 if opts.droop_sign == "stabilizing" else w_0 - w_hat
    return p_t0 + g.d_f * dev


def power_droop_reference(v_d, v_q, i_d, i_q, w_hat, w_0, p_t0, mu_pt,
                          g: ControlGains, opts: Options):
    """Frequency droop and active-power PI.

    Returns ``(p_t, p_t_ref, dw_m_ref, dmu_pt)``.
    """
    p_t = terminal_power(v_d, v_q, i_d, i_q)
    p_t_ref = droop_power_reference(w_hat, w_0, p_t0, g, opts)
    err = p_t_ref - p_t
    return p_t, p_t_ref, g.k_pp * err + g.k_ip * mu_pt, err


def speed_reference(w_mT_ref, dw_m_ref, opts: Options | None = None):
    w = w_mT_ref + dw_m_ref
    if opts is not None and opts.speed_saturation:
        w = np.clip(w, opts.speed_min, opts.speed_max)
    return w
