import numpy as np
import pytest
from scipy import signal

from vsdr import ModelParameters, Scenario, assemble_derivative, find_equilibrium, integrate
from vsdr.params import IDX, UIDX
from vsdr.reduction import (REDUCED_INPUTS, STRUCTURES, StepBattery, StepResponse,
                            TransferFunctionModel, assemble_reduced_closed_loop, battery_fit,
                            dump_models, fit_score, fit_transfer_function, load_models,
                            minimal_realization, parse_structure, reference_models, rmse_metrics,
                            step_schedule, tf_to_state_space)

REF = reference_models()


def test_bundled_table():
    assert set(REF) == set(STRUCTURES)
    assert REF["P2Z1"].fit == 77 and REF["P3Z0"].fit == 22
    for m in REF.values():
        assert m.is_hurwitz()


def test_p1z0_pole_and_gain():
    m = REF["P1Z0"]
    np.testing.assert_allclose(m.poles(), [-964.8])
    assert m.dc_gain == pytest.approx(731.36 / 964.8) and m.dc_gain == pytest.approx(0.758, abs=5e-4)
    A, _, _ = tf_to_state_space(m)
    ev = np.linalg.eigvals(A)
    assert np.sum(np.abs(ev) > 1e-9) == 1
    assert ev[np.argmax(np.abs(ev))] == pytest.approx(-964.8)


def test_p2z0_poles():
    np.testing.assert_allclose(np.sort_complex(REF["P2Z0"].poles()),
                               [-3.0845 - 68.12845117680278j, -3.0845 + 68.12845117680278j], rtol=1e-12)


@pytest.mark.parametrize("tag, bad", [
    ("P2Z1", dict(num=(1, 1, 1), den=(1, 2, 3))),
    ("P1Z0", dict(num=(0, 0, 1), den=(1, 1, 3))),
    ("P3Z0", dict(num=(0, 1, 1), den=(1, 2, 3))),
    ("P2Z0", dict(num=(0, 0, 1), den=(0, 2, 3))),
])
def test_structure_tag_must_match_coefficients(tag, bad):
    with pytest.raises(ValueError):
        TransferFunctionModel(tag, **bad)


@pytest.mark.parametrize("tag", ["P0Z0", "P2Z2", "P4Z1", "X2Z1"])
def test_invalid_tags(tag):
    with pytest.raises(ValueError):
        parse_structure(tag)


@pytest.mark.parametrize("structure", STRUCTURES)
def test_companion_realization_frequency_response(structure):
    tf = REF[structure]
    A, B, C = tf_to_state_space(tf)
    assert A.shape == (3, 3) and np.array_equal(B, [1, 0, 0])
    den = np.array([1.0, *tf.den]) if tf.order == 3 else None
    if den is not None:
        np.testing.assert_array_equal(A[0], -den[1:])
    w = np.logspace(-1, 4, 20)
    H = np.array([C @ np.linalg.solve(1j * wk * np.eye(3) - A, B) for wk in w])
    ref = tf.freqresp(w)
    assert np.max(np.abs(H - ref) / np.abs(ref)) < 1e-10
    Am, Bm, Cm = minimal_realization(tf)
    n = tf.order
    Hm = np.array([Cm @ np.linalg.solve(1j * wk * np.eye(n) - Am, Bm) for wk in w])
    assert np.max(np.abs(Hm - ref) / np.abs(ref)) < 1e-10


@pytest.mark.parametrize("structure", STRUCTURES)
def test_step_response_against_scipy(structure):
    tf = REF[structure]
    t = np.linspace(0, 0.5, 501)
    _, y = signal.step((tf.numerator(), tf.denominator()), T=t)
    np.testing.assert_allclose(tf.step_response(t), y, rtol=1e-6, atol=1e-9 * np.max(np.abs(y)))


def test_realization_equals_transfer_function_simulation():
    tf = REF["P3Z2"]
    A, B, C = tf_to_state_space(tf)
    t = np.linspace(0, 0.3, 3001)
    u = np.where(t > 0.05, 0.02, 0.0) - np.where(t > 0.2, 0.03, 0.0)
    _, y_ss, _ = signal.lsim((A, B[:, None], C[None, :], np.zeros((1, 1))), u, t)
    _, y_tf, _ = signal.lsim((tf.numerator(), tf.denominator()), u, t)
    np.testing.assert_allclose(y_ss, y_tf, atol=1e-6 * np.max(np.abs(y_tf)))


def test_model_document_round_trip(tmp_path):
    text = dump_models(list(REF.values()))
    assert load_models(text) == REF
    f = tmp_path / "m.ini"
    f.write_text(text)
    assert load_models(f) == REF


def test_fit_score():
    y = np.sin(np.linspace(0, 3, 50))
    assert fit_score(y, y) == 100.0
    assert fit_score(y, np.full_like(y, y.mean())) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_score(np.ones(5), np.ones(5))


def synthetic_battery(tf, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(1501) * 1e-3
    segs = []
    for a, b in step_schedule():
        y = (b - a) * tf.step_response(t) + noise * rng.standard_normal(t.size)
        segs.append(StepResponse(a, b, t, y, 0.3))
    return StepBattery(segs)


def test_fit_recovers_known_model():
    truth = REF["P2Z1"]
    m = fit_transfer_function(synthetic_battery(truth), "P2Z1", restarts=6, seed=3)
    np.testing.assert_allclose(m.num, truth.num, rtol=0.01)
    np.testing.assert_allclose(m.den, truth.den, rtol=0.01)
    assert m.fit >= 99.9
    assert battery_fit(synthetic_battery(truth), truth) == pytest.approx(100.0)


def test_fit_is_seeded():
    b = synthetic_battery(REF["P2Z1"], noise=1e-4)
    a = fit_transfer_function(b, "P3Z1", restarts=3, seed=7)
    c = fit_transfer_function(b, "P3Z1", restarts=3, seed=7, jobs=2)
    assert a == c


def test_fit_rejects_empty_battery():
    with pytest.raises(ValueError):
        fit_transfer_function(StepBattery([]), "P2Z1")


def test_step_schedule():
    s = step_schedule()
    assert len(s) == 10
    assert s[0][0] == pytest.approx(1 / 3) and s[-1][0] == pytest.approx(4 / 3)
    assert all((b > a) == (k % 2 == 0) for k, (a, b) in enumerate(s))
    with pytest.raises(ValueError):
        step_schedule(step=0.2)


def test_battery_coverage_and_gain(battery):
    assert len(battery) == 10
    lo, hi = battery.speed_range
    assert lo == pytest.approx(1 / 3) and hi == pytest.approx(4 / 3)
    for s in battery.segments:
        assert s.dp_t[0] == 0.0
        assert s.dp_t[-1] / s.amplitude > 0
    assert battery.meta["schedule"] == step_schedule()


def test_battery_segments_start_at_rest():
    p = ModelParameters().replace(motor_feedforward="reference")
    for a, _ in step_schedule()[::3]:
        op = find_equilibrium(params=p, pin_speed=a)
        d = np.array(assemble_derivative(op.x, op.u, p))
        d[[IDX["theta_hat"], IDX["theta_g"]]] -= op.u[UIDX["w_0"]] * p.bases.w_b
        assert np.max(np.abs(d)) < 1e-8


def test_battery_csv_round_trip(battery):
    back = StepBattery.from_csv(battery.to_csv())
    assert len(back) == len(battery)
    for a, b in zip(back.segments, battery.segments):
        assert (a.w_from, a.w_to, a.p_t0) == (b.w_from, b.w_to, b.p_t0)
        assert np.array_equal(a.t, b.t) and np.array_equal(a.dp_t, b.dp_t)


@pytest.mark.parametrize("structure, n", [("P1Z0", 8), ("P2Z1", 9), ("P3Z2", 10)])
def test_reduced_layout(params, op, structure, n):
    m = assemble_reduced_closed_loop(structure, params, operating_point=op)
    assert len(m.state_names) == n and m.input_names == REDUCED_INPUTS
    eq = m.equilibrium()
    assert eq.residual < 1e-10
    assert m.outputs(eq.x, eq.u)["p_t"] == pytest.approx(op.u.p_t0)
    assert m.outputs(eq.x, eq.u)["w_m_ref"] == pytest.approx(op.x.w_m)


def test_reduced_stability_facts(params, op):
    assert assemble_reduced_closed_loop("P2Z1", params, operating_point=op).linearize().is_stable()
    assert not assemble_reduced_closed_loop("P2Z0", params, operating_point=op).linearize().is_stable()


def test_absolute_offset_variant(params, op):
    m = assemble_reduced_closed_loop("P2Z1", params, operating_point=op, offset="absolute")
    eq = m.equilibrium()
    assert eq.residual < 1e-10
    assert m.outputs(eq.x, eq.u)["p_t"] == pytest.approx(op.u.p_t0)
    with pytest.raises(ValueError):
        assemble_reduced_closed_loop("P2Z1", params, operating_point=op, offset="other")


def test_reduced_rest_persists(params, op):
    m = assemble_reduced_closed_loop("P3Z1", params, operating_point=op)
    tr = m.simulate(Scenario(0.5, (), 1e-3))
    assert np.ptp(tr["p_t"]) < 1e-9 and not tr.meta["diverged"]


def test_p2z0_simulation_diverges(params, op):
    m = assemble_reduced_closed_loop("P2Z0", params, operating_point=op)
    tr = m.simulate(Scenario.load_step(duration=5.0), bound=1e3)
    assert tr.meta["diverged"] or np.max(np.abs(tr["p_t"] - op.u.p_t0)) > 0.5


def test_zero_models_beat_zero_free_models(params, op):
    sc = Scenario.load_step(duration=1.0)
    full = integrate(op.x, sc, params, op.u)
    err = {}
    for k in ("P1Z0", "P3Z0", "P2Z1", "P3Z1", "P3Z2"):
        m = assemble_reduced_closed_loop(k, params, operating_point=op)
        r = m.simulate(sc)
        err[k] = rmse_metrics(full.t, full["p_t"], r.t, r["p_t"]).transient
    assert max(err[k] for k in ("P2Z1", "P3Z1", "P3Z2")) < min(err["P1Z0"], err["P3Z0"])


def test_rmse_metrics():
    t = np.arange(1001) * 1e-3
    x = np.sin(t)
    same = rmse_metrics(t, x, t, x)
    assert (same.initial, same.transient) == (0.0, 0.0)
    r = rmse_metrics(t, x + 0.01, t, x)
    assert r.initial == pytest.approx(0.01) and r.transient == pytest.approx(0.01)
    d = np.where(t > 0.5, 0.02, 0.0)
    lit = rmse_metrics(t, x + d, t, x)
    conv = rmse_metrics(t, x + d, t, x, conventional=True)
    assert lit.transient == pytest.approx(0.01, abs=1e-4)
    assert conv.transient == pytest.approx(0.02 / np.sqrt(2), abs=1e-4)
    with pytest.raises(ValueError):
        rmse_metrics(t, x, t[:-1], x[:-1])
    with pytest.raises(ValueError):
        rmse_metrics(t[:500], x[:500], t[:500], x[:500])
