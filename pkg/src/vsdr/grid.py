"""Centre-of-inertia grid equivalent with a stiff terminal voltage."""
from __future__ import annotations

import numpy as np

from .params import ElectricalParams, GridParams, PerUnitBases


def grid_derivatives(p_m, dw_g, p_l, p_t_agg, p_m0, gp: GridParams, bases: PerUnitBases,
                     w_0: float = 1.0):
    """Turbine-governor, swing equation and grid angle.

    Powers are in grid pu; ``p_t_agg`` is the aggregated device consumption.
    Returns ``(dp_m, ddw_g, dtheta_g)``.
    """
    imbalance = p_m - p_l - p_t_agg
    dp_m = (-(p_m - p_m0) / gp.T_p - dw_g / (gp.d_p * gp.T_p)
            - gp.T_z / (2 * gp.H_g * gp.d_p * gp.T_p) * imbalance)
    ddw_g = imbalance / (2 * gp.H_g)
    return dp_m, ddw_g, (w_0 + dw_g) * bases.w_b


def terminal_voltage(i_d, i_q, theta_g, theta_hat, el: ElectricalParams, v_g=None):
    """Terminal voltage in the PLL frame behind the grid reactance."""
    v_g = el.v_g if v_g is None else v_g
    delta = theta_g - theta_hat
    return el.x_g * i_q + v_g * np.cos(delta), -el.x_g * i_d + v_g * np.sin(delta)


def steady_state_frequency(dp_l, kappa, d_f, d_p):
    """Long-run frequency deviation after a load step, governor plus device droop.

    Uses the stabilizing droop orientation.
    """
    if d_p <= 0:
        raise ValueError("d_p must be positive")
    denom = 1.0 / d_p + kappa * d_f
    if denom == 0:
        raise ZeroDivisionError("degenerate droop combination")
    return -dp_l / denom
