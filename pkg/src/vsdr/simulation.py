"""Full 21-state model: right-hand side, equilibria and time integration."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import control, grid, plant
from .params import (IDX, N_STATES, STATE_NAMES, UIDX, FullState,
                     InputVector, ModelParameters, default_inputs)

OUTPUT_NAMES: tuple[str, ...] = (
    "p_t", "p_t_ref", "w_m_ref", "w_hat", "p_t_agg", "v_m2", "i_m_ref", "i_d_ref",
    "w_mT_ref", "dw_m_ref", "v_d", "v_q",
)


class EquilibriumError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class IntegrationError(RuntimeError):
    def __init__(self, message, t=np.nan):
        super().__init__(f"{message} at t = {t:.6g} s")
        self.t = t


def _evaluate(x, u, p: ModelParameters, w_ref_override=None, strict=True):
    """Evaluate the algebraic chain and all state derivatives.

    Returns ``(dx, outputs)`` where ``outputs`` follows :data:`OUTPUT_NAMES`.
    With ``strict=False`` the DC-link singularity check is skipped; the
    integrator uses this for trial stages and checks accepted samples.
    """
    (T_f, w_m, i_m, t_c, q_th, i_d, i_q, v_dc, th_hat, th_g, v_pll, p_m, dw_g,
     mu_cd, mu_cq, mu_T, mu_v, mu_wm, mu_im, mu_pll, mu_pt) = x
    p_l, T_f_ref, v_dc_ref, i_q_ref, T_a, p_t0, p_m0, w_0, v_g = u
    g, th, bl, el, b = p.control, p.thermal, p.bldc, p.electrical, p.bases

    w_g = w_0 + dw_g
    # PLL estimate -> terminal voltage -> controls -> plant
    dv_pll, w_hat, dmu_pll, dth_hat = control.sogi_pll_step(
        th_g, th_hat, v_pll, mu_pll, w_g, w_0, g, b)
    v_d, v_q = grid.terminal_voltage(i_d, i_q, th_g, th_hat, el, v_g)

    w_mT_ref, dmu_T = control.temperature_reference(T_f, T_f_ref, mu_T, g)
    p_t, p_t_ref, dw_m_ref, dmu_pt = control.power_droop_reference(
        v_d, v_q, i_d, i_q, w_hat, w_0, p_t0, mu_pt, g, p.options)
    if w_ref_override is None:
        w_m_ref = control.speed_reference(w_mT_ref, dw_m_ref, p.options)
    else:
        w_m_ref = w_ref_override
        dmu_pt = 0.0

    v_ff = v_dc if p.options.motor_feedforward == "measured" else v_dc_ref
    i_m_ref, v_m2, dmu_wm, dmu_im = control.inverter_control(
        w_m, w_m_ref, i_m, mu_wm, mu_im, v_ff, g)
    i_d_ref, dmu_v = control.rectifier_voltage_control(v_dc, v_dc_ref, mu_v, g)
    m_d, m_q, dmu_cd, dmu_cq = control.dq_current_control(
        i_d, i_q, i_d_ref, i_q_ref, mu_cd, mu_cq, v_dc_ref, w_hat, g, el)

    dq_th, dt_c = plant.compressor_derivatives(q_th, t_c, w_m, th)
    dT_f = plant.compartment_derivative(T_f, q_th, th, T_a)
    di_m, dw_m = plant.bldc_derivatives(i_m, w_m, v_m2, t_c, bl, b)
    di_d, di_q = plant.electrical_derivatives(i_d, i_q, v_d, v_q, m_d, m_q, v_dc, w_g, el, b)
    i_dc2 = plant.inverter_dc_current(v_m2, i_m, v_dc) if strict else v_m2 * i_m / v_dc
    dv_dc = plant.dclink_derivative(m_d, m_q, i_d, i_q, i_dc2, el, b, p.options.dclink_factor)

    p_t_agg = p.kappa * p_t
    dp_m, ddw_g, dth_g = grid.grid_derivatives(p_m, dw_g, p_l, p_t_agg, p_m0, p.grid, b, w_0)

    dx = np.array([dT_f, dw_m, di_m, dt_c, dq_th, di_d, di_q, dv_dc, dth_hat, dth_g, dv_pll,
                   dp_m, ddw_g, dmu_cd, dmu_cq, dmu_T, dmu_v, dmu_wm, dmu_im, dmu_pll, dmu_pt])
    out = np.array([p_t, p_t_ref, w_m_ref, w_hat, p_t_agg, v_m2, i_m_ref, i_d_ref,
                    w_mT_ref, dw_m_ref, v_d, v_q])
    return dx, out


def assemble_derivative(x, u, params: ModelParameters | None = None, w_ref_override=None):
    """Time derivative of the full state for inputs ``u``."""
    dx, _ = _evaluate(np.asarray(x, float), np.asarray(u, float), params or ModelParameters(),
                      w_ref_override)
    return FullState(dx)


def derived_outputs(x, u, params: ModelParameters | None = None, w_ref_override=None) -> dict:
    _, out = _evaluate(np.asarray(x, float), np.asarray(u, float), params or ModelParameters(),
                       w_ref_override)
    return dict(zip(OUTPUT_NAMES, out.tolist()))


# ---------------------------------------------------------------------------
# equilibria

@dataclass(frozen=True)
class OperatingPoint:
    """Equilibrium state together with the inputs that make it one."""
    x: FullState
    u: InputVector
    residual: float = 0.0

    def __iter__(self):
        return iter((self.x, self.u))


def speed_for_temperature(T_f, T_a, params: ModelParameters) -> float:
    """Compressor speed whose steady heat removal balances the ambient gain at ``T_f``."""
    th = params.thermal
    q = (T_a - T_f) / th.r_th
    disc = th.a1**2 - 4 * th.a2 * (th.a0 - q)
    if disc < 0:
        raise EquilibriumError(f"no compressor speed removes {q:.4f} pu of heat")
    roots = np.array([(-th.a1 + s * np.sqrt(disc)) / (2 * th.a2) for s in (1.0, -1.0)])
    ok = roots[(roots >= 0)]
    if ok.size == 0:
        raise EquilibriumError(f"no non-negative speed removes {q:.4f} pu of heat")
    return float(ok.min())


def temperature_for_speed(w_m, T_a, params: ModelParameters) -> float:
    q_th0, _ = plant.compressor_steady_state(w_m, params.thermal)
    return T_a - params.thermal.r_th * q_th0


def _closed_form_equilibrium(u, p: ModelParameters):
    """Analytic operating point; returns ``(x, u)`` with p_t0 and p_m0 made consistent."""
    u = InputVector(np.asarray(u, float))
    g, th, bl, el = p.control, p.thermal, p.bldc, p.electrical
    w = speed_for_temperature(u.T_f_ref, u.T_a, p)
    q_th, t_c = plant.compressor_steady_state(w, th)
    i_m = (t_c + bl.b * w) / bl.k_t
    v_m2 = bl.r_a * i_m + bl.k_e * w
    v_dc = u.v_dc_ref
    i_dc2 = v_m2 * i_m / v_dc
    i_q = u.i_q_ref
    w_g = u.w_0
    # DC balance factor*(m_d i_d + m_q i_q) = i_dc2 with m from the AC equations
    # reduces to r_s (i_d^2 + i_q^2) - v_g i_d + P / factor = 0
    P = i_dc2 * v_dc / p.options.dclink_factor
    disc = u.v_g**2 - 4 * el.r_s * (el.r_s * i_q**2 + P)
    if disc < 0:
        raise EquilibriumError("DC-link power exceeds what the grid connection can deliver")
    i_d = (u.v_g - np.sqrt(disc)) / (2 * el.r_s)
    v_d = el.x_g * i_q + u.v_g
    v_q = -el.x_g * i_d
    m_d = (v_d - el.r_s * i_d + el.l_s * w_g * i_q) / v_dc
    m_q = (v_q - el.r_s * i_q - el.l_s * w_g * i_d) / v_dc
    dec = el.l_s * u.w_0 / u.v_dc_ref
    p_t = 0.5 * (v_d * i_d + v_q * i_q)

    x = FullState(
        T_f=u.T_f_ref, w_m=w, i_m=i_m, t_c=t_c, q_th=q_th, i_d=i_d, i_q=i_q, v_dc=v_dc,
        theta_hat=0.0, theta_g=0.0, v_pll_q=0.0, p_m=u.p_l + p.kappa * p_t, dw_g=0.0,
        mu_c_d=(dec * i_q - m_d) / g.k_ic1, mu_c_q=-(m_q + dec * i_d) / g.k_ic1,
        mu_T=w / g.k_iT, mu_v=i_d / g.k_iv, mu_wm=0.0, mu_im=(v_m2 - v_dc) / g.k_ic2,
        mu_pll=0.0, mu_pt=0.0,
    )
    u = u.with_value("p_t0", p_t).with_value("p_m0", u.p_l + p.kappa * p_t)
    return x, u


def find_equilibrium(u: InputVector | None = None, guess=None,
                     params: ModelParameters | None = None, *, pin_speed: float | None = None,
                     balance_grid: bool | None = None, tol: float = 1e-10,
                     max_iter: int = 50) -> OperatingPoint:
    """Solve for a stationary operating point by damped Newton iteration.

    The rotational null direction is removed by pinning ``theta_hat = 0`` and
    solving for the angle difference; the split between the temperature and
    power integrators is removed by pinning ``mu_pt = 0`` and solving for the
    consistent pre-disturbance power ``p_t0``.

    Parameters
    ----------
    pin_speed
        Instead of holding ``T_f`` at its reference, pin the compressor speed
        and retarget ``T_f_ref`` to the compartment temperature that speed
        sustains.
    balance_grid
        Solve ``p_m0`` for zero frequency deviation.  Defaults to true unless
        the parameter set fixes ``p_m0``.
    """
    p = params or ModelParameters()
    u = InputVector(np.asarray(u if u is not None else default_inputs(p), float))
    if balance_grid is None:
        balance_grid = p.grid.p_m0 is None
    if not balance_grid and p.grid.p_m0 is not None:
        u = u.with_value("p_m0", p.grid.p_m0)
    if pin_speed is not None:
        u = u.with_value("T_f_ref", temperature_for_speed(pin_speed, u.T_a, p))

    if guess is None:
        x0, u_cf = _closed_form_equilibrium(u, p)
        u = u.with_value("p_t0", u_cf.p_t0)
        if balance_grid:
            u = u.with_value("p_m0", u_cf.p_m0)
    else:
        x0 = np.asarray(guess, float).copy()
        x0[IDX["theta_g"]] -= x0[IDX["theta_hat"]]
        x0[IDX["theta_hat"]] = 0.0
        x0[IDX["mu_pt"]] = 0.0

    free_states = [k for k in range(N_STATES) if k not in (IDX["theta_hat"], IDX["mu_pt"])]
    free_inputs = [UIDX["p_t0"]] + ([UIDX["p_m0"]] if balance_grid else [])
    if pin_speed is not None:
        free_inputs.append(UIDX["T_f_ref"])
    eq_rows = [k for k in range(N_STATES) if k not in (IDX["theta_hat"], IDX["theta_g"])]

    def unpack(z):
        x = x0.copy()
        x[free_states] = z[:len(free_states)]
        uu = np.asarray(u, float).copy()
        uu[free_inputs] = z[len(free_states):]
        return x, uu

    def residual(z):
        x, uu = unpack(z)
        dx, _ = _evaluate(x, uu, p)
        r = [dx[eq_rows], [dx[IDX["theta_g"]] - dx[IDX["theta_hat"]]]]
        if balance_grid:
            r.append([x[IDX["dw_g"]]])
        if pin_speed is not None:
            r.append([x[IDX["w_m"]] - pin_speed])
        return np.concatenate(r)

    z = np.concatenate([x0[free_states], np.asarray(u, float)[free_inputs]])
    r = residual(z)
    norm = np.max(np.abs(r))
    it = 0
    while norm >= tol and it < max_iter:
        J = _fd_jacobian(residual, z)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-4:
            z_new = z + lam * step
            try:
                r_new = residual(z_new)
            except plant.SingularOperatingPoint:
                r_new = np.array([np.inf])
            n_new = np.max(np.abs(r_new))
            if n_new < norm or lam <= 1.5e-4:
                break
            lam *= 0.5
        if not np.isfinite(n_new):
            raise EquilibriumError("Newton step left the valid region", norm)
        if n_new >= norm and norm < 1e3 * tol:
            break  # floating-point floor
        z, r, norm = z_new, r_new, n_new
        it += 1
    if norm >= tol:
        raise EquilibriumError(f"no convergence after {it} iterations", norm)
    x, uu = unpack(z)
    w = x[IDX["w_m"]]
    if not (p.options.speed_min - 1e-9 <= w <= p.options.speed_max + 1e-9):
        raise EquilibriumError(f"equilibrium speed {w:.4f} pu outside operating range", norm)
    return OperatingPoint(FullState(x), InputVector(uu), float(norm))


def _fd_jacobian(fun, z, rel=1e-7):
    f0 = fun(z)
    J = np.empty((f0.size, z.size))
    for k in range(z.size):
        h = rel * max(1.0, abs(z[k]))
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        J[:, k] = (fun(zp) - fun(zm)) / (2 * h)
    return J


def default_operating_point(params: ModelParameters | None = None,
                            w_m0: float | None = None) -> OperatingPoint:
    p = params or ModelParameters()
    return find_equilibrium(default_inputs(p), params=p, pin_speed=w_m0)


# ---------------------------------------------------------------------------
# scenarios and trajectories

@dataclass(frozen=True)
class Event:
    t: float
    input: str
    value: float

    def __post_init__(self):
        if self.input not in UIDX:
            raise ValueError(f"unknown input {self.input!r}")


@dataclass(frozen=True)
class Scenario:
    """Step-change experiment on the input vector.

    ``inputs`` of ``None`` means "the equilibrium inputs of the initial state".
    Event values are absolute input values unless ``relative`` is set, in
    which case they are added to the current value.
    """
    duration: float
    events: tuple[Event, ...] = ()
    dt: float = 1e-3
    inputs: InputVector | None = None
    relative: bool = False

    def __post_init__(self):
        ts = [e.t for e in self.events]
        if any(t < 0 or t > self.duration for t in ts):
            raise ValueError("event times must lie within [0, duration]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("event times must be strictly increasing")
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("duration and dt must be positive")

    @classmethod
    def load_step(cls, dp_l=-0.1, duration=1.5, dt=1e-3):
        return cls(duration, (Event(0.0, "p_l", dp_l),), dt, relative=True)

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        """Read a scenario file.

        ``key = value`` header lines (``duration``, ``dt``, ``relative``)
        followed by ``t, input, value`` event rows; ``#`` starts a comment.
        """
        header: dict[str, str] = {}
        events = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line and "," not in line:
                k, v = (s.strip() for s in line.split("=", 1))
                header[k] = v
                continue
            parts = [s.strip() for s in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"bad event row {line!r}")
            if parts[0] == "t":
                continue
            events.append(Event(float(parts[0]), parts[1], float(parts[2])))
        rel = header.get("relative", "false").lower() in ("1", "true", "yes")
        return cls(float(header.get("duration", 1.5)), tuple(events),
                   float(header.get("dt", 1e-3)), relative=rel)

    def dump(self) -> str:
        lines = [f"duration = {self.duration!r}", f"dt = {self.dt!r}",
                 f"relative = {'true' if self.relative else 'false'}", "t, input, value"]
        lines += [f"{e.t!r}, {e.input}, {e.value!r}" for e in self.events]
        return "\n".join(lines) + "\n"


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    state_names: tuple[str, ...] = STATE_NAMES
    output_names: tuple[str, ...] = OUTPUT_NAMES
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.t) != len(self.states) or len(self.t) != len(self.outputs):
            raise ValueError("row counts of t, states and outputs differ")

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.t
        if name in self.state_names:
            return self.states[:, self.state_names.index(name)]
        if name in self.output_names:
            return self.outputs[:, self.output_names.index(name)]
        raise KeyError(name)

    @property
    def columns(self) -> list[str]:
        return ["t", *self.state_names, *self.output_names]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        data = np.column_stack([self.t, self.states, self.outputs])
        for row in data:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path, n_states: int | None = None) -> "Trajectory":
        """Read a trajectory CSV written by :meth:`to_csv`.

        The state/output split is recovered from the header: columns named
        in :data:`OUTPUT_NAMES` are outputs, the rest states (or the first
        ``n_states`` columns after ``t`` when given).
        """
        text = Path(source).read_text() if isinstance(source, Path) or (
            "\n" not in str(source)) else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[0] != "t":
            raise ValueError("first column must be 't'")
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        names = header[1:]
        if n_states is None:
            n_states = sum(1 for n in names if n not in OUTPUT_NAMES)
        return cls(data[:, 0], data[:, 1:1 + n_states], data[:, 1 + n_states:],
                   tuple(names[:n_states]), tuple(names[n_states:]))


def _piecewise_inputs(u0: np.ndarray, scenario: Scenario, uidx: dict | None = None):
    """Yield ``(t_start, t_end, u)`` segments."""
    uidx = UIDX if uidx is None else uidx
    u = np.asarray(u0, float).copy()
    t = 0.0
    segs = []
    for ev in scenario.events:
        if ev.input not in uidx:
            raise ValueError(f"input {ev.input!r} is not an input of this model")
        if ev.t > t:
            segs.append((t, ev.t, u.copy()))
            t = ev.t
        k = uidx[ev.input]
        u[k] = u[k] + ev.value if scenario.relative else ev.value
    if scenario.duration > t:
        segs.append((t, scenario.duration, u.copy()))
    return segs


def run_segments(deriv, x0, u0, scenario: Scenario, *, angles=(), omega=0.0, uidx=None,
                 rtol=1e-8, atol=1e-10, method="LSODA", check=None, bound=None, guard=None):
    """Integrate ``deriv(t, x, u)`` through the piecewise-constant inputs of ``scenario``.

    Angles listed in ``angles`` are integrated relative to a frame rotating at
    ``omega`` rad/s.  ``check(t, Y)`` may raise on accepted samples.  With a
    finite ``bound`` the run stops early once ``max|x|`` exceeds it and the
    result is flagged as diverged instead of raising.  ``guard(t, y)`` is a
    terminal event: when it crosses zero the run aborts with
    :class:`IntegrationError`.

    Returns ``(t, X, U, diverged)``.
    """
    x0 = np.asarray(x0, float)
    ang = list(angles)
    n = int(round(scenario.duration / scenario.dt))
    t_grid = np.linspace(0.0, n * scenario.dt, n + 1)

    def rhs_factory(u):
        def rhs(t, y):
            x = y.copy()
            x[ang] += omega * t
            dx = deriv(t, x, u)
            dx[ang] -= omega
            return dx
        return rhs

    events = []
    if guard is not None:
        guard.terminal = True
        events.append(guard)
    if bound is not None:
        def blowup(t, y):
            return bound - np.max(np.abs(y))
        blowup.terminal = True
        events.append(blowup)

    y = x0.copy()
    times, ys, us = [], [], []
    diverged = False
    segs = _piecewise_inputs(u0, scenario, uidx)
    for k, (ta, tb, u) in enumerate(segs):
        last = k == len(segs) - 1
        inside = (t_grid >= ta - 1e-12) & (t_grid < tb - 1e-12)
        if last:
            inside |= np.abs(t_grid - tb) <= 1e-12
        t_keep = t_grid[inside]
        t_eval = np.unique(np.concatenate([t_keep, [tb]]))
        sol = solve_ivp(rhs_factory(u), (ta, tb), y, method=method, t_eval=t_eval,
                        rtol=rtol, atol=atol, events=events or None)
        if sol.status < 0:
            raise IntegrationError(sol.message, float(sol.t[-1]) if sol.t.size else ta)
        if guard is not None and sol.t_events[0].size:
            t_hit = float(sol.t_events[0][0])
            raise IntegrationError(f"guard {getattr(guard, '__name__', 'event')} fired", t_hit)
        if not np.all(np.isfinite(sol.y)):
            bad = np.argmax(~np.all(np.isfinite(sol.y), axis=0))
            raise IntegrationError("non-finite state", float(sol.t[bad]))
        if check is not None:
            check(sol.t, sol.y)
        keep = np.isin(sol.t, t_keep)
        times.append(sol.t[keep])
        ys.append(sol.y[:, keep].T)
        us.extend([u] * int(keep.sum()))
        if sol.status == 1 and bound is not None:
            diverged = True
            break
        y = sol.y[:, -1].copy()
    t = np.concatenate(times)
    X = np.vstack(ys) if ys else np.empty((0, x0.size))
    X[:, ang] += omega * t[:, None]
    return t, X, us, diverged


def integrate(x0, scenario: Scenario, params: ModelParameters | None = None,
              u0: InputVector | None = None, *, rtol: float = 1e-8, atol: float = 1e-10,
              method: str = "LSODA", w_ref=None) -> Trajectory:
    """Integrate the full model through a scenario.

    Events stop the integrator exactly at their time and restart it.  The
    two absolute angles are integrated relative to a frame rotating at the
    initial nominal frequency, so their precision does not degrade as they
    grow; they are converted back when sampling.

    ``w_ref`` optionally replaces the speed reference by a function of time
    (temperature and power loops bypassed).
    """
    p = params or ModelParameters()
    if u0 is None:
        u0 = scenario.inputs
    if u0 is None:
        raise ValueError("initial inputs are required (pass u0 or set scenario.inputs)")
    u0 = np.asarray(u0, float)

    def deriv(t, x, u):
        wr = None if w_ref is None else w_ref(t)
        return _evaluate(x, u, p, wr, strict=False)[0]

    def check(t, Y):
        low = Y[IDX["v_dc"]] < plant.V_DC_MIN
        if np.any(low):
            raise IntegrationError("DC-link voltage collapsed", float(t[np.argmax(low)]))

    def dc_link_collapse(t, y):
        return y[IDX["v_dc"]] - plant.V_DC_MIN

    t, X, us, _ = run_segments(deriv, x0, u0, scenario,
                               angles=(IDX["theta_hat"], IDX["theta_g"]),
                               omega=u0[UIDX["w_0"]] * p.bases.w_b,
                               rtol=rtol, atol=atol, method=method, check=check,
                               guard=dc_link_collapse)
    outs = np.array([_evaluate(X[i], us[i], p, None if w_ref is None else w_ref(t[i]))[1]
                     for i in range(t.size)])
    return Trajectory(t, X, outs, meta={"rtol": rtol, "atol": atol, "method": method})
