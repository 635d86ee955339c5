"""Reduced-order transfer-function models of the refrigerator unit.

A model maps the speed reference (pu) to terminal power (pu).  In closed
loop it replaces the thermal, motor, converter and DC-link dynamics while the
PLL, droop, power controller and grid are kept.
"""
from __future__ import annotations

import configparser
import csv
import io
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from . import control, grid
from .params import ModelParameters
from .simulation import (EquilibriumError, IntegrationError, OperatingPoint, Scenario,
                         Trajectory, find_equilibrium, integrate, run_segments)
from .smallsignal import LinearModel, NotAnEquilibrium, jacobians

STRUCTURES = ("P1Z0", "P2Z0", "P2Z1", "P3Z0", "P3Z1", "P3Z2")
REDUCED_INPUTS = ("p_l", "p_t0", "p_m0", "w_0")
REDUCED_OUTPUTS = ("p_t", "p_t_ref", "w_m_ref", "w_hat", "p_t_agg")
_LOOP_STATES = ("theta_hat", "theta_g", "v_pll_q", "p_m", "dw_g", "mu_pll", "mu_pt")
_TAG = re.compile(r"^P([123])Z([012])$")


class FitError(RuntimeError):
    def __init__(self, message: str, best_residual: float = np.inf):
        super().__init__(f"{message} (best residual {best_residual:.4g})")
        self.best_residual = best_residual


class BatteryError(RuntimeError):
    pass


def parse_structure(tag: str) -> tuple[int, int]:
    m = _TAG.match(tag)
    if not m or int(m.group(2)) >= int(m.group(1)):
        raise ValueError(f"invalid structure tag {tag!r}; expected PiZj with j < i")
    return int(m.group(1)), int(m.group(2))


# ---------------------------------------------------------------------------
# transfer functions

@dataclass(frozen=True)
class TransferFunctionModel:
    """(n2 s^2 + n1 s + n0) / den(s) in the zero-padded layout of the bundled table.

    For three poles den = s^3 + d2 s^2 + d1 s + d0; for fewer poles the
    leading slots are zero (two poles: d2 s^2 + d1 s + d0, one pole:
    d1 s + d0).
    """
    structure: str
    num: tuple[float, float, float]
    den: tuple[float, float, float]
    fit: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "num", tuple(float(v) for v in self.num))
        object.__setattr__(self, "den", tuple(float(v) for v in self.den))
        if len(self.num) != 3 or len(self.den) != 3:
            raise ValueError("num and den hold exactly three coefficients")
        i, j = parse_structure(self.structure)
        d2, d1, _ = self.den
        if i == 2 and d2 == 0:
            raise ValueError(f"{self.structure}: d2 must be non-zero for two poles")
        if i == 1 and (d2 != 0 or d1 == 0):
            raise ValueError(f"{self.structure}: one pole needs d2 = 0 and d1 != 0")
        n_hi = self.num[: 2 - j]
        if any(v != 0 for v in n_hi) or self.num[2 - j] == 0:
            raise ValueError(f"{self.structure}: numerator does not have {j} zero(s)")

    @property
    def order(self) -> int:
        return parse_structure(self.structure)[0]

    @property
    def n_zeros(self) -> int:
        return parse_structure(self.structure)[1]

    def numerator(self) -> np.ndarray:
        """Numerator polynomial, highest power first, without leading zeros."""
        return np.array(self.num[2 - self.n_zeros:])

    def denominator(self) -> np.ndarray:
        full = np.array([1.0, *self.den]) if self.order == 3 else np.array([0.0, *self.den])
        return full[3 - self.order:]

    def monic(self) -> tuple[np.ndarray, np.ndarray]:
        den = self.denominator()
        return self.numerator() / den[0], den / den[0]

    def poles(self) -> np.ndarray:
        return np.roots(self.denominator())

    def zeros(self) -> np.ndarray:
        return np.roots(self.numerator()) if self.n_zeros else np.array([])

    @property
    def dc_gain(self) -> float:
        return float(self.numerator()[-1] / self.denominator()[-1])

    def is_hurwitz(self) -> bool:
        return bool(np.all(self.poles().real < 0))

    def freqresp(self, w) -> np.ndarray:
        s = 1j * np.asarray(w, float)
        return np.polyval(self.numerator(), s) / np.polyval(self.denominator(), s)

    def step_response(self, t) -> np.ndarray:
        num, den = self.monic()
        return _step_basis(den, np.asarray(t, float), self.n_zeros) @ num[::-1]

    def to_config(self) -> str:
        return dump_models([self])


def _step_basis(den: np.ndarray, t: np.ndarray, n_zeros: int) -> np.ndarray:
    """Unit-step responses of s^k / den(s), k = 0..n_zeros, as columns.

    ``den`` is monic.  Uses partial fractions when the poles are distinct and
    falls back to a state-space simulation otherwise.
    """
    p = np.roots(den)
    t = np.asarray(t, float)
    out = np.empty((t.size, n_zeros + 1))
    gaps = np.abs(p[:, None] - p[None, :])
    np.fill_diagonal(gaps, np.inf)
    sep = gaps.min() if p.size > 1 else np.inf
    if np.all(p != 0) and sep > 1e-7 * max(1.0, np.max(np.abs(p))):
        dd = np.polyval(np.polyder(den), p)
        E = np.exp(np.outer(np.maximum(t, 0.0), p))
        for k in range(n_zeros + 1):
            r = p**k / (dd * p)
            y = (E @ r).real + (1.0 / den[-1] if k == 0 else 0.0)
            out[:, k] = np.where(t < 0, 0.0, y)
        return out
    for k in range(n_zeros + 1):
        num = np.zeros(k + 1)
        num[0] = 1.0
        _, y = signal.step((num, den), T=np.maximum(t, 0.0))
        out[:, k] = np.where(t < 0, 0.0, y)
    return out


def _model_from_poly(structure: str, num_low: np.ndarray, den_monic: np.ndarray,
                     fit: float | None = None) -> TransferFunctionModel:
    """Build a model from a monic denominator and numerator coefficients s^0, s^1, ..."""
    n = np.zeros(3)
    n[2 - np.arange(num_low.size)] = num_low
    d = np.zeros(4)
    d[4 - den_monic.size:] = den_monic
    return TransferFunctionModel(structure, tuple(n), tuple(d[1:]), fit)


def load_models(source: str | Path | None = None) -> dict[str, TransferFunctionModel]:
    """Read models from a config document; ``None`` loads the bundled reference set."""
    if source is None:
        text = resources.files("vsdr").joinpath("data/reference_models.ini").read_text()
    elif isinstance(source, Path) or "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    out = {}
    for sec in cp.sections():
        parse_structure(sec)
        c = cp[sec]
        fit = c.get("fit")
        out[sec] = TransferFunctionModel(
            sec, tuple(float(c[k]) for k in ("n2", "n1", "n0")),
            tuple(float(c[k]) for k in ("d2", "d1", "d0")),
            None if fit in (None, "", "none") else float(fit))
    return out


def reference_models() -> dict[str, TransferFunctionModel]:
    return load_models(None)


def dump_models(models: Sequence[TransferFunctionModel]) -> str:
    out = io.StringIO()
    for m in models:
        out.write(f"[{m.structure}]\n")
        for k, v in zip(("n2", "n1", "n0"), m.num):
            out.write(f"{k} = {v!r}\n")
        for k, v in zip(("d2", "d1", "d0"), m.den):
            out.write(f"{k} = {v!r}\n")
        out.write(f"fit = {'none' if m.fit is None else repr(m.fit)}\n\n")
    return out.getvalue()


def tf_to_state_space(tf: TransferFunctionModel):
    """Three-state companion realization of the zero-padded model.

    Lower-order models are padded with poles at the origin that cancel
    against numerator zeros, so the transfer function is unchanged.
    """
    num, den = tf.monic()
    shift = 3 - tf.order
    den3 = np.r_[den, np.zeros(shift)]
    num3 = np.zeros(3)
    num3[3 - num.size - shift: 3 - shift] = num
    A = np.zeros((3, 3))
    A[0] = -den3[1:]
    A[1, 0] = A[2, 1] = 1.0
    B = np.array([1.0, 0.0, 0.0])
    return A, B, num3


def minimal_realization(tf: TransferFunctionModel):
    """Controllable canonical realization with as many states as poles."""
    num, den = tf.monic()
    n = tf.order
    A = np.zeros((n, n))
    A[0] = -den[1:]
    if n > 1:
        A[np.arange(1, n), np.arange(n - 1)] = 1.0
    B = np.zeros(n)
    B[0] = 1.0
    C = np.zeros(n)
    C[n - num.size:] = num
    return A, B, C


# ---------------------------------------------------------------------------
# closed loop

@dataclass
class ReducedModel:
    """Transfer-function unit closed by PLL, droop, power PI and grid.

    ``offset`` selects how the model output relates to terminal power:
    ``"deviation"`` adds the operating-point power ``p_op`` to the model
    output and drives it with the speed-reference deviation from ``w_mT``;
    ``"absolute"`` feeds the absolute speed reference and reads the model
    output as absolute power.
    """
    tf: TransferFunctionModel
    params: ModelParameters
    w_mT: float
    p_op: float
    offset: str = "deviation"
    Av: np.ndarray = field(init=False, repr=False)
    Bv: np.ndarray = field(init=False, repr=False)
    Cv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.offset not in ("deviation", "absolute"):
            raise ValueError("offset must be 'deviation' or 'absolute'")
        self.Av, self.Bv, self.Cv = minimal_realization(self.tf)

    @property
    def n_v(self) -> int:
        return self.tf.order

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(f"v_{k + 1}" for k in range(self.n_v)) + _LOOP_STATES

    @property
    def input_names(self) -> tuple[str, ...]:
        return REDUCED_INPUTS

    @property
    def output_names(self) -> tuple[str, ...]:
        return REDUCED_OUTPUTS

    def index(self, name: str) -> int:
        return self.state_names.index(name)

    def evaluate(self, x, u):
        p = self.params
        g, b = p.control, p.bases
        n = self.n_v
        v = x[:n]
        th_hat, th_g, v_pll, p_m, dw_g, mu_pll, mu_pt = x[n:]
        p_l, p_t0, p_m0, w_0 = u
        w_g = w_0 + dw_g
        dv_pll, w_hat, dmu_pll, dth_hat = control.sogi_pll_step(
            th_g, th_hat, v_pll, mu_pll, w_g, w_0, g, b)
        y = float(self.Cv @ v)
        p_t = self.p_op + y if self.offset == "deviation" else y
        p_t_ref = control.droop_power_reference(w_hat, w_0, p_t0, g, p.options)
        err = p_t_ref - p_t
        w_m_ref = control.speed_reference(self.w_mT, g.k_pp * err + g.k_ip * mu_pt, p.options)
        drive = w_m_ref - self.w_mT if self.offset == "deviation" else w_m_ref
        dv = self.Av @ v + self.Bv * drive
        p_t_agg = p.kappa * p_t
        dp_m, ddw_g, dth_g = grid.grid_derivatives(p_m, dw_g, p_l, p_t_agg, p_m0, p.grid, b, w_0)
        dx = np.r_[dv, dth_hat, dth_g, dv_pll, dp_m, ddw_g, dmu_pll, err]
        return dx, np.array([p_t, p_t_ref, w_m_ref, w_hat, p_t_agg])

    def derivative(self, x, u) -> np.ndarray:
        return self.evaluate(np.asarray(x, float), np.asarray(u, float))[0]

    def outputs(self, x, u) -> dict:
        return dict(zip(REDUCED_OUTPUTS, self.evaluate(np.asarray(x, float), np.asarray(u, float))[1]))

    def default_inputs(self) -> np.ndarray:
        p_l = self.params.grid.p_l0
        return np.array([p_l, self.p_op, p_l + self.params.kappa * self.p_op, self.params.grid.w_0])

    def equilibrium(self, u=None) -> OperatingPoint:
        """Closed-form operating point with the grid balanced (``p_m0`` adjusted).

        At rest the PLL is locked, the power error is zero and so p_t = p_t0.
        """
        u = self.default_inputs() if u is None else np.array(u, float)
        p_l, p_t0, _, w_0 = u
        gain = self.tf.dc_gain
        g = self.params.control
        if self.offset == "deviation":
            drive = (p_t0 - self.p_op) / gain
            w_ref = self.w_mT + drive
        else:
            drive = p_t0 / gain
            w_ref = drive
        o = self.params.options
        if o.speed_saturation and not (o.speed_min <= w_ref <= o.speed_max):
            raise EquilibriumError(f"speed reference {w_ref:.4f} pu outside the admissible range")
        v = -np.linalg.solve(self.Av, self.Bv * drive)
        p_m = p_l + self.params.kappa * p_t0
        mu_pt = (w_ref - self.w_mT) / g.k_ip
        x = np.r_[v, 0.0, 0.0, 0.0, p_m, 0.0, 0.0, mu_pt]
        u = u.copy()
        u[2] = p_m
        r = self.derivative(x, u)
        r[self.n_v:self.n_v + 2] -= w_0 * self.params.bases.w_b
        return OperatingPoint(x, u, float(np.max(np.abs(r))))

    def structural_directions(self) -> np.ndarray:
        rot = np.zeros(len(self.state_names))
        rot[[self.index("theta_hat"), self.index("theta_g")]] = 1.0
        return rot[:, None]

    def linearize(self, x0=None, u0=None, tol: float = 1e-8) -> LinearModel:
        if x0 is None:
            x0, u0 = self.equilibrium(u0)
        x0 = np.asarray(x0, float)
        u0 = np.asarray(u0, float)
        o = self.params.options
        w_ref = self.evaluate(x0, u0)[1][2]
        if o.speed_saturation and not (o.speed_min < w_ref < o.speed_max):
            raise NotAnEquilibrium(float("nan"))
        # without the clamp the loop is at most bilinear, so central differences
        # with a wide step are exact up to rounding
        free = replace(self, params=replace(self.params, options=replace(o, speed_saturation=False)))
        A, B, C, D, dx0 = jacobians(free.evaluate, x0, u0, rel_step=1e-4)
        r = dx0.copy()
        r[self.n_v:self.n_v + 2] -= u0[3] * self.params.bases.w_b
        res = float(np.max(np.abs(r)))
        if res > tol:
            raise NotAnEquilibrium(res)
        return LinearModel(A, B, self.state_names, REDUCED_INPUTS, C, D, REDUCED_OUTPUTS,
                           x0, u0, self.structural_directions(),
                           meta={"model": self.tf.structure, "residual": res})

    def simulate(self, scenario: Scenario, x0=None, u0=None, *, bound: float = 1e3,
                 rtol: float = 1e-8, atol: float = 1e-10, method: str = "LSODA") -> Trajectory:
        """Integrate through ``scenario``; stops early and flags divergence past ``bound``."""
        if x0 is None:
            x0, u0 = self.equilibrium(u0)
        u0 = np.asarray(u0, float)
        n = self.n_v
        uidx = {k: i for i, k in enumerate(REDUCED_INPUTS)}
        t, X, us, diverged = run_segments(
            lambda t, x, u: self.evaluate(x, u)[0], x0, u0, scenario,
            angles=(n, n + 1), omega=u0[3] * self.params.bases.w_b, uidx=uidx,
            rtol=rtol, atol=atol, method=method, bound=bound)
        outs = np.array([self.evaluate(X[i], us[i])[1] for i in range(t.size)])
        return Trajectory(t, X, outs.reshape(t.size, len(REDUCED_OUTPUTS)), self.state_names,
                          REDUCED_OUTPUTS, meta={"model": self.tf.structure, "diverged": diverged})


def assemble_reduced_closed_loop(tf: TransferFunctionModel | str, params: ModelParameters | None = None,
                                 *, w_m0: float | None = None, offset: str = "deviation",
                                 operating_point: OperatingPoint | None = None) -> ReducedModel:
    """Close a transfer-function model with the unchanged outer loops and grid.

    The operating point (speed reference and power) is taken from the full
    model's equilibrium, at ``w_m0`` if given.
    """
    p = params or ModelParameters()
    if isinstance(tf, str):
        tf = reference_models()[tf]
    op = operating_point or find_equilibrium(params=p, pin_speed=w_m0)
    w = float(op.x[1])
    return ReducedModel(tf, p, w, float(op.u[5]), offset)


# ---------------------------------------------------------------------------
# identification data

@dataclass
class StepResponse:
    w_from: float
    w_to: float
    t: np.ndarray
    dp_t: np.ndarray
    p_t0: float

    @property
    def amplitude(self) -> float:
        return self.w_to - self.w_from


@dataclass
class StepBattery:
    segments: list[StepResponse]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.segments)

    @property
    def speed_range(self) -> tuple[float, float]:
        w = [s.w_from for s in self.segments] + [s.w_to for s in self.segments]
        return min(w), max(w)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment", "w_from", "w_to", "p_t0", "t", "dp_t"])
        for k, s in enumerate(self.segments):
            for tk, yk in zip(s.t, s.dp_t):
                w.writerow([k, repr(s.w_from), repr(s.w_to), repr(s.p_t0), repr(float(tk)), repr(float(yk))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "StepBattery":
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) \
            else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["segment", "w_from", "w_to", "p_t0", "t", "dp_t"]:
            raise ValueError("not a step-battery CSV")
        segs: dict[int, list] = {}
        for r in rows[1:]:
            segs.setdefault(int(r[0]), []).append([float(v) for v in r[1:]])
        out = []
        for k in sorted(segs):
            a = np.array(segs[k])
            out.append(StepResponse(a[0, 0], a[0, 1], a[:, 3], a[:, 4], a[0, 2]))
        return cls(out)


def step_schedule(n_steps: int = 10, w_min: float = 1 / 3, w_max: float = 4 / 3,
                  step: float = 0.02) -> list[tuple[float, float]]:
    """Equal-width partitions of the speed range with alternating up and down steps.

    Even partitions step up from their lower edge, odd ones down from their
    upper edge, so both range endpoints are visited.
    """
    edges = np.linspace(w_min, w_max, n_steps + 1)
    if not 0 < step <= edges[1] - edges[0]:
        raise ValueError("step must be positive and fit inside one partition")
    out = []
    for k in range(n_steps):
        if k % 2 == 0:
            out.append((float(edges[k]), float(edges[k] + step)))
        else:
            out.append((float(edges[k + 1]), float(edges[k + 1] - step)))
    return out


def generate_step_battery(params: ModelParameters | None = None, *, n_steps: int = 10,
                          w_min: float = 1 / 3, w_max: float = 4 / 3, step: float = 0.02,
                          duration: float = 1.5, dt: float = 1e-3,
                          feedforward: str | None = "reference") -> StepBattery:
    """Speed-reference step responses of the full model with the power loop open.

    Each segment starts from an equilibrium at its initial speed; the speed
    reference is then held at the final value.  ``feedforward`` overrides the
    motor voltage feed-forward option for the experiment (``None`` keeps the
    parameter set as is).
    """
    p = params or ModelParameters()
    if feedforward is not None:
        p = replace(p, options=replace(p.options, motor_feedforward=feedforward))
    sched = step_schedule(n_steps, w_min, w_max, step)
    segs = []
    for k, (a, b) in enumerate(sched):
        try:
            op = find_equilibrium(params=p, pin_speed=a)
        except EquilibriumError as exc:
            raise BatteryError(f"segment {k}: no equilibrium at w = {a:.4f} pu: {exc}") from exc
        try:
            tr = integrate(op.x, Scenario(duration, (), dt), p, op.u, w_ref=lambda t, b=b: b)
        except IntegrationError as exc:
            raise BatteryError(f"segment {k}: {a:.4f} -> {b:.4f} pu failed at t = {exc.t:.4f} s: {exc}") from exc
        pt = tr["p_t"]
        segs.append(StepResponse(a, b, tr.t, pt - pt[0], float(pt[0])))
    meta = {"schedule": sched, "step": step, "duration": duration, "dt": dt,
            "feedforward": p.options.motor_feedforward, "n_steps": n_steps,
            "range": (w_min, w_max)}
    return StepBattery(segs, meta)


# ---------------------------------------------------------------------------
# fitting

def fit_score(y, yhat) -> float:
    """Normalized-RMSE fit in percent; 100 is a perfect match."""
    y = np.asarray(y, float)
    yhat = np.asarray(yhat, float)
    den = np.linalg.norm(y - y.mean())
    if den == 0:
        raise ValueError("reference signal is constant")
    return float(100.0 * (1.0 - np.linalg.norm(y - yhat) / den))


def battery_fit(battery: StepBattery, tf: TransferFunctionModel) -> float:
    """Fit score averaged over the segments of ``battery``."""
    return float(np.mean([fit_score(s.dp_t, s.amplitude * tf.step_response(s.t))
                          for s in battery.segments]))


def _den_from_theta(theta, order):
    e = np.exp(theta)
    if order == 1:
        return np.array([1.0, e[0]])
    if order == 2:
        return np.array([1.0, e[0], e[1]])
    return np.convolve([1.0, e[0]], [1.0, e[1], e[2]])


def _theta_guess(rng, order):
    """Random stable pole layout: a real pole and/or a damped pair."""
    def pair():
        w = np.exp(rng.uniform(np.log(1.0), np.log(3e3)))
        z = rng.uniform(0.05, 1.0)
        return [np.log(2 * z * w), np.log(w * w)]
    if order == 1:
        return np.array([rng.uniform(np.log(0.5), np.log(3e3))])
    if order == 2:
        return np.array(pair())
    return np.array([rng.uniform(np.log(0.5), np.log(3e3)), *pair()])


def _project(theta, order, n_zeros, data):
    """Variable projection: best numerator for the denominator given by ``theta``."""
    den = _den_from_theta(theta, order)
    Phi = np.vstack([amp * _step_basis(den, t, n_zeros) for t, amp, _ in data])
    Y = np.concatenate([y for _, _, y in data])
    num, *_ = np.linalg.lstsq(Phi, Y, rcond=None)
    return num, den, Y - Phi @ num


def _collapse(data):
    """Merge segments sampled on the same grid.

    For a shared grid, sum_k |y_k - a_k r|^2 equals A |z - r|^2 plus a
    constant, with A = sum a_k^2 and z = sum a_k y_k / A, so one weighted
    signal per grid gives the same minimizer at a fraction of the cost.
    """
    groups: list[list] = []
    for t, a, y in data:
        for g in groups:
            if g[0].shape == t.shape and np.array_equal(g[0], t):
                g[1] += a * a
                g[2] = g[2] + a * y
                break
        else:
            groups.append([t, a * a, a * y])
    out = []
    for t, A, ay in groups:
        w = np.sqrt(A)
        out.append((t, w, ay / w))
    return out


def _fit_restart(args):
    order, n_zeros, data, seed = args
    rng = np.random.default_rng(seed)
    th0 = _theta_guess(rng, order)
    scale = np.linalg.norm(np.concatenate([y for _, _, y in data])) or 1.0

    def res(th):
        if np.any(np.abs(th) > 40):
            return np.full(sum(y.size for _, _, y in data), 1e3)
        r = _project(th, order, n_zeros, data)[2] / scale
        return np.where(np.isfinite(r), r, 1e3)

    try:
        sol = optimize.least_squares(res, th0, method="trf", max_nfev=200)
    except (ValueError, np.linalg.LinAlgError):
        return np.inf, None
    if not np.all(np.isfinite(sol.fun)):
        return np.inf, None
    return float(np.linalg.norm(sol.fun)), sol.x


def fit_transfer_function(battery: StepBattery, structure: str, *, restarts: int = 8,
                          seed: int = 0, jobs: int = 1) -> TransferFunctionModel:
    """Output-error fit of a ``PiZj`` model to the battery's power deviations.

    The denominator is parametrized through positive factor coefficients so
    every candidate is stable; for each denominator the numerator follows
    from linear least squares.  Restarts draw their initial poles from
    independent child streams of ``seed``.
    """
    if len(battery) == 0:
        raise ValueError("battery is empty")
    order, n_zeros = parse_structure(structure)
    data = _collapse([(s.t, s.amplitude, s.dp_t) for s in battery.segments])
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    tasks = [(order, n_zeros, data, ss) for ss in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_fit_restart, tasks))
    else:
        results = [_fit_restart(t) for t in tasks]
    best = min(results, key=lambda r: r[0])
    if best[1] is None:
        raise FitError(f"all {restarts} restarts failed for {structure}", best[0])
    num, den, _ = _project(best[1], order, n_zeros, data)
    tf = _model_from_poly(structure, num, den)
    return replace(tf, fit=battery_fit(battery, tf))


# ---------------------------------------------------------------------------
# accuracy metrics

@dataclass(frozen=True)
class RmseResult:
    initial: float
    transient: float


def rmse_metrics(t_full, x_full, t_red, x_red, *, t_event: float = 0.0, window: float = 1.0,
                 conventional: bool = False) -> RmseResult:
    """Initialization and transient error of a reduced trajectory.

    By default the two errors are the absolute initial deviation and the mean
    absolute deviation over ``window`` seconds after ``t_event``.  With
    ``conventional`` the transient error is the root of the mean square.
    """
    t_full = np.asarray(t_full, float)
    t_red = np.asarray(t_red, float)
    if t_full.shape != t_red.shape or not np.allclose(t_full, t_red, rtol=0, atol=1e-9):
        raise ValueError("trajectories are not sampled on the same time grid")
    x_full = np.asarray(x_full, float)
    x_red = np.asarray(x_red, float)
    k0 = int(np.argmin(np.abs(t_full - t_event)))
    sel = (t_full > t_event + 1e-12) & (t_full <= t_event + window + 1e-9)
    if t_full[-1] < t_event + window - 1e-9:
        raise ValueError("trajectories end before the evaluation window")
    d = x_full[sel] - x_red[sel]
    initial = float(np.sqrt((x_full[k0] - x_red[k0]) ** 2))
    if conventional:
        transient = float(np.sqrt(np.mean(d**2)))
    else:
        transient = float(np.mean(np.sqrt(d**2)))
    return RmseResult(initial, transient)


@dataclass(frozen=True)
class ReducedFactory:
    """Picklable ``params -> LinearModel`` builder for sweeps and maps."""
    model: TransferFunctionModel | str
    offset: str = "deviation"

    def __call__(self, params: ModelParameters) -> LinearModel:
        return assemble_reduced_closed_loop(self.model, params, offset=self.offset).linearize()
