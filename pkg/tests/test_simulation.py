import numpy as np
import pytest

from vsdr import ModelParameters, Scenario, Trajectory, assemble_derivative, find_equilibrium, integrate
from vsdr.params import IDX, UIDX, default_inputs
from vsdr.simulation import EquilibriumError, Event, derived_outputs

W_EQ = 0.41211285078933135  # root of q_th0(w) = (T_a - T_f*) / r_th


def sync_residual(dx, u, w_b=314.16):
    r = np.array(dx, float)
    r[[IDX["theta_hat"], IDX["theta_g"]]] -= u[UIDX["w_0"]] * w_b
    return r


def test_equilibrium_values(op):
    assert op.x.w_m == pytest.approx(W_EQ, abs=1e-9)
    assert op.x.T_f == 3.0
    assert op.x.v_dc == 1.0
    assert op.residual < 1e-10


def test_derivative_vanishes_at_equilibrium(op, params):
    dx = assemble_derivative(op.x, op.u, params)
    assert np.max(np.abs(sync_residual(dx, op.u))) < 1e-8


def test_energy_balance_at_equilibrium(op, params):
    y = derived_outputs(op.x, op.u, params)
    assert abs(op.x.p_m - y["p_t_agg"] - op.u.p_l) < 1e-8


def test_temperature_perturbation_sparsity(op, params):
    x = np.array(op.x)
    x[IDX["T_f"]] += 1.0
    d = sync_residual(assemble_derivative(x, op.u, params), op.u)
    assert d[IDX["T_f"]] < 0           # warmer than ambient balance: loses heat faster
    assert d[IDX["mu_T"]] == pytest.approx(-1.0)
    assert d[IDX["w_m"]] == pytest.approx(0, abs=1e-8)  # speed reacts only through its loop
    for name in ("p_m", "dw_g", "theta_g", "v_pll_q", "mu_pll"):
        assert abs(d[IDX[name]]) < 1e-8, name


def test_load_step_initial_derivative(op, params):
    u = op.u.with_value("p_l", op.u.p_l - 0.1)
    d = sync_residual(assemble_derivative(op.x, u, params), u)
    assert d[IDX["dw_g"]] == pytest.approx(0.1, rel=1e-9)
    device = [IDX[n] for n in ("T_f", "w_m", "i_m", "t_c", "q_th", "i_d", "i_q", "v_dc")]
    assert np.max(np.abs(d[device])) < 1e-8


def test_pinned_speed(params):
    op = find_equilibrium(params=params, pin_speed=1.0)
    assert op.x.w_m == pytest.approx(1.0, abs=1e-10)
    assert op.u.T_f_ref == pytest.approx(op.x.T_f, abs=1e-9)
    assert op.x.T_f < 3.0


def test_equilibrium_from_guess(op, params):
    guess = np.array(op.x) * (1 + 1e-4)
    again = find_equilibrium(op.u, guess, params)
    np.testing.assert_allclose(again.x, op.x, rtol=1e-7, atol=1e-8)


def test_infeasible_temperature():
    p = ModelParameters()
    u = default_inputs(p).with_value("T_f_ref", -60.0)
    with pytest.raises(EquilibriumError):
        find_equilibrium(u, params=p)


def test_zero_event_persistence(op, params):
    tr = integrate(op.x, Scenario(1.0, (), 1e-3), params, op.u)
    rel = tr.states - np.asarray(op.x)
    rel[:, [IDX["theta_hat"], IDX["theta_g"]]] -= 314.16 * tr.t[:, None]
    assert np.max(np.abs(rel)) < 1e-7


def test_forced_frequency_raises_power():
    p = ModelParameters().replace(H_g=1e6)  # frequency held by an infinitely stiff grid
    op = find_equilibrium(params=p)
    x = np.array(op.x)
    x[IDX["dw_g"]] = 0.01
    tr = integrate(x, Scenario(3.0, (), 1e-3), p, op.u)
    assert tr["p_t"][-1] - op.u.p_t0 == pytest.approx(0.2, rel=0.01)


def test_tolerance_convergence(op, params):
    sc = Scenario.load_step(duration=0.5)
    a = integrate(op.x, sc, params, op.u)
    b = integrate(op.x, sc, params, op.u, rtol=5e-9, atol=5e-11)
    keep = [k for k in range(21) if k not in (IDX["theta_hat"], IDX["theta_g"], IDX["mu_T"])]
    assert np.max(np.abs(a.states[-1, keep] - b.states[-1, keep])) < 1e-6


def test_deterministic(op, params):
    sc = Scenario.load_step(duration=0.2)
    a = integrate(op.x, sc, params, op.u)
    b = integrate(op.x, sc, params, op.u)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)


def test_event_is_applied_at_its_time(op, params):
    sc = Scenario(0.3, (Event(0.1, "p_l", op.u.p_l - 0.1),), 1e-3)
    tr = integrate(op.x, sc, params, op.u)
    assert tr.t.size == 301
    before = tr["dw_g"][tr.t <= 0.1]
    assert np.max(np.abs(before)) < 1e-9
    assert tr["dw_g"][-1] > 1e-3


def test_scenario_text_round_trip():
    sc = Scenario(2.0, (Event(0.0, "p_l", -0.1), Event(1.0, "v_g", 0.05)), 1e-3, relative=True)
    assert Scenario.parse(sc.dump()) == sc


def test_scenario_file_format():
    sc = Scenario.parse("# load step\nduration = 1.5\nrelative = true\nt, input, value\n0.0, p_l, -0.1\n")
    assert sc.duration == 1.5 and sc.relative and sc.events[0].input == "p_l"


@pytest.mark.parametrize("events", [
    (Event(0.5, "p_l", 1.0), Event(0.5, "p_l", 0.9)),
    (Event(3.0, "p_l", 1.0),),
])
def test_scenario_rejects_bad_events(events):
    with pytest.raises(ValueError):
        Scenario(1.0, events)


def test_unknown_event_input():
    with pytest.raises(ValueError):
        Event(0.0, "p_x", 1.0)


def test_trajectory_csv_round_trip(op, params):
    tr = integrate(op.x, Scenario.load_step(duration=0.01), params, op.u)
    back = Trajectory.from_csv(tr.to_csv())
    assert back.columns == tr.columns and len(tr.columns) == 1 + 21 + 12
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.outputs, tr.outputs)


def test_missing_inputs_rejected(op, params):
    with pytest.raises(ValueError):
        integrate(op.x, Scenario(0.1), params)
