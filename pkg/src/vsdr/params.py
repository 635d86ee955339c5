"""Model parameters, per-unit bases and state/input vector layouts.

Defaults reproduce the published parameter table of the detailed model.
Parameters are grouped by subsystem; every group is a frozen dataclass so a
parameter set can be shared freely between concurrent evaluations.

The configuration file format is INI-like: one ``[section]`` per subsystem
and one ``symbol = value`` line per parameter::

    [grid]
    H_g = 5.0

Use :func:`load_parameters` to read a document and :func:`dump_parameters` to
write one.  A dump of the defaults is itself a valid configuration.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter set is incomplete or violates an invariant."""

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


# ---------------------------------------------------------------------------
# state / input layout

STATE_NAMES: tuple[str, ...] = (
    "T_f", "w_m", "i_m", "t_c", "q_th", "i_d", "i_q", "v_dc",
    "theta_hat", "theta_g", "v_pll_q", "p_m", "dw_g",
    "mu_c_d", "mu_c_q", "mu_T", "mu_v", "mu_wm", "mu_im", "mu_pll", "mu_pt",
)
INPUT_NAMES: tuple[str, ...] = (
    "p_l", "T_f_ref", "v_dc_ref", "i_q_ref", "T_a", "p_t0", "p_m0", "w_0", "v_g",
)
N_STATES = len(STATE_NAMES)
N_INPUTS = len(INPUT_NAMES)

IDX = {name: k for k, name in enumerate(STATE_NAMES)}
UIDX = {name: k for k, name in enumerate(INPUT_NAMES)}


class FullState(np.ndarray):
    """21-vector of full-model states, addressable by symbol.

    A thin ``ndarray`` subclass: ``x.w_m`` is ``x[1]``.  Arithmetic returns
    plain arrays of the same layout.
    """

    def __new__(cls, values=None, **named):
        arr = np.zeros(N_STATES) if values is None else np.array(values, dtype=float)
        if arr.shape != (N_STATES,):
            raise ValueError(f"FullState needs {N_STATES} entries, got shape {arr.shape}")
        for key, val in named.items():
            arr[IDX[key]] = val
        return arr.view(cls)

    def __getattr__(self, name):
        try:
            return float(self[IDX[name]])
        except KeyError:
            raise AttributeError(name) from None

    def as_dict(self) -> dict[str, float]:
        return {name: float(self[k]) for k, name in enumerate(STATE_NAMES)}


class InputVector(np.ndarray):
    """9-vector of full-model inputs, addressable by symbol."""

    def __new__(cls, values=None, **named):
        arr = np.zeros(N_INPUTS) if values is None else np.array(values, dtype=float)
        if arr.shape != (N_INPUTS,):
            raise ValueError(f"InputVector needs {N_INPUTS} entries, got shape {arr.shape}")
        for key, val in named.items():
            arr[UIDX[key]] = val
        return arr.view(cls)

    def __getattr__(self, name):
        try:
            return float(self[UIDX[name]])
        except KeyError:
            raise AttributeError(name) from None

    def with_value(self, name: str, value: float) -> "InputVector":
        out = InputVector(np.asarray(self))
        out[UIDX[name]] = value
        return out

    def as_dict(self) -> dict[str, float]:
        return {name: float(self[k]) for k, name in enumerate(INPUT_NAMES)}


# ---------------------------------------------------------------------------
# parameter groups

def _positive(*names):
    def check(obj):
        for n in names:
            v = getattr(obj, n)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(n, f"must be > 0, got {v!r}")
    return check


@dataclass(frozen=True)
class PerUnitBases:
    P_b: float = 100.0          # W, device
    P_g: float = 200e6          # W, grid
    w_b: float = 314.16         # rad/s
    rated_speed: float = 3000.0  # rpm

    def validate(self):
        _positive("P_b", "P_g", "w_b", "rated_speed")(self)


@dataclass(frozen=True)
class ThermalParams:
    a2: float = -0.295
    a1: float = 1.583
    a0: float = -0.075
    b1: float = -1.64e-5
    b2: float = 5.909
    b3: float = 0.558
    b4: float = 0.086
    tau_q: float = 100.0
    tau_c: float = 1.0
    r_th: float = 55.0
    c_th: float = 454.6
    T_a: float = 32.0
    T_f_ref: float = 3.0

    def validate(self):
        _positive("tau_q", "tau_c", "r_th", "c_th")(self)
        w = np.linspace(0.3, 1.35, 211)
        if np.any(self.a2 * w**2 + self.a1 * w + self.a0 <= 0):
            raise ParameterError("a0", "heat map q_th0 must be positive on [0.3, 1.35] pu")


@dataclass(frozen=True)
class BldcParams:
    r_a: float = 0.0081
    l_a: float = 0.015
    H_m: float = 0.2023
    b: float = 0.0987
    k_t: float = 0.7398
    k_e: float = 0.7398

    def validate(self):
        _positive("r_a", "l_a", "H_m", "b", "k_t", "k_e")(self)
        if self.k_t != self.k_e:
            raise ParameterError("k_t", "torque constant must equal EMF constant k_e")


@dataclass(frozen=True)
class ElectricalParams:
    c_dc: float = 11.43
    r_s: float = 0.012
    l_s: float = 0.038
    x_g: float = 0.15
    v_g: float = 1.41

    def validate(self):
        _positive("c_dc", "r_s", "l_s", "x_g", "v_g")(self)


@dataclass(frozen=True)
class ControlGains:
    k_ps: float = 43.76
    k_is: float = 700.0
    k_pc2: float = 0.019
    k_ic2: float = 3.226
    k_pv: float = 4.973
    k_iv: float = 239.7
    k_pc1: float = 20.59
    k_ic1: float = 1672.0
    k_pT: float = -0.159
    k_iT: float = -3.18e-5
    k_pp: float = 4.5
    k_ip: float = 90.0
    d_f: float = 20.0
    k_p_pll: float = 0.4
    k_i_pll: float = 4.69
    k: float = 1.63

    @property
    def T_ip(self) -> float:
        """Power-loop integral time constant k_pp / k_ip."""
        return self.k_pp / self.k_ip

    def validate(self):
        if not self.k_pT < 0:
            raise ParameterError("k_pT", f"must be < 0, got {self.k_pT!r}")
        if not self.k_iT < 0:
            raise ParameterError("k_iT", f"must be < 0, got {self.k_iT!r}")
        _positive("k_ps", "k_is", "k_pc2", "k_ic2", "k_pv", "k_iv", "k_pc1", "k_ic1",
                  "k_pp", "k_ip", "k_p_pll", "k_i_pll", "k")(self)
        if not self.d_f >= 0:
            raise ParameterError("d_f", f"must be >= 0, got {self.d_f!r}")


@dataclass(frozen=True)
class GridParams:
    H_g: float = 0.5
    T_p: float = 7.0
    T_z: float = 2.1
    d_p: float = 0.02
    p_l0: float = 1.0
    # None: pinned to the pre-disturbance balance p_l0 + kappa * p_t
    p_m0: float | None = None
    n_units: int = 100_000
    w_0: float = 1.0

    def validate(self):
        _positive("H_g", "T_p", "T_z", "d_p", "w_0")(self)
        if not self.T_p > self.T_z:
            raise ParameterError("T_z", "turbine lead time constant must be below T_p")
        if self.n_units < 1 or int(self.n_units) != self.n_units:
            raise ParameterError("n_units", f"must be an integer >= 1, got {self.n_units!r}")


@dataclass(frozen=True)
class Options:
    """Modelling switches that are not physical parameters.

    droop_sign
        ``"stabilizing"`` uses p_t* = p_t0 + d_f (w_hat - w_0) so that
        consumption rises with frequency; ``"literal"`` (alias ``"paper"``)
        keeps the printed form p_t* = p_t0 + d_f (w_0 - w_hat).
    speed_saturation
        Clamp the speed reference to ``[speed_min, speed_max]``.
    dclink_factor
        Multiplier of the rectifier-side term in the DC-link equation.  The
        default 1/2 makes the DC-link energy balance consistent with the
        peak-value terminal power p_t = (v_d i_d + v_q i_q) / 2; 3/2 is the
        three-phase dq convention.
    motor_feedforward
        DC voltage added to the motor modulation voltage: ``"measured"``
        uses v_dc, ``"reference"`` uses v_dc*.  With the measured value the
        speed loop alone (power loop open) loses damping above about 0.45 pu.
    """
    droop_sign: str = "stabilizing"
    speed_saturation: bool = True
    speed_min: float = 0.3
    speed_max: float = 1.35
    dclink_factor: float = 0.5
    motor_feedforward: str = "measured"

    def __post_init__(self):
        if self.droop_sign == "paper":
            object.__setattr__(self, "droop_sign", "literal")

    def validate(self):
        if self.droop_sign not in ("stabilizing", "literal"):
            raise ParameterError("droop_sign", f"expected 'stabilizing' or 'literal', got {self.droop_sign!r}")
        if self.motor_feedforward not in ("measured", "reference"):
            raise ParameterError("motor_feedforward",
                                 f"expected 'measured' or 'reference', got {self.motor_feedforward!r}")
        if not self.speed_min < self.speed_max:
            raise ParameterError("speed_min", "must be below speed_max")


_GROUPS = {
    "bases": PerUnitBases,
    "thermal": ThermalParams,
    "bldc": BldcParams,
    "electrical": ElectricalParams,
    "control": ControlGains,
    "grid": GridParams,
    "options": Options,
}


@dataclass(frozen=True)
class ModelParameters:
    bases: PerUnitBases = field(default_factory=PerUnitBases)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    bldc: BldcParams = field(default_factory=BldcParams)
    electrical: ElectricalParams = field(default_factory=ElectricalParams)
    control: ControlGains = field(default_factory=ControlGains)
    grid: GridParams = field(default_factory=GridParams)
    options: Options = field(default_factory=Options)

    def __post_init__(self):
        for name in _GROUPS:
            getattr(self, name).validate()

    @property
    def kappa(self) -> float:
        """Aggregation scale from device-pu power to grid-pu power."""
        return aggregation_scale(self.grid.n_units, self.bases)

    def replace(self, **overrides: Any) -> "ModelParameters":
        """Return a copy with individual symbols overridden.

        Keys are bare symbols (``H_g=5``) or ``group.symbol``; bare symbols
        must be unambiguous.
        """
        per_group: dict[str, dict[str, Any]] = {}
        for key, value in overrides.items():
            group, name = _locate(key)
            per_group.setdefault(group, {})[name] = value
        kwargs = {g: replace(getattr(self, g), **kv) for g, kv in per_group.items()}
        return replace(self, **kwargs)

    def get(self, key: str) -> Any:
        if key == "T_ip":
            return self.control.T_ip
        group, name = _locate(key)
        return getattr(getattr(self, group), name)


def _locate(key: str) -> tuple[str, str]:
    if "." in key:
        group, name = key.split(".", 1)
        if group not in _GROUPS or name not in {f.name for f in fields(_GROUPS[group])}:
            raise KeyError(key)
        return group, name
    hits = [g for g, cls in _GROUPS.items() if key in {f.name for f in fields(cls)}]
    if not hits:
        raise KeyError(key)
    if len(hits) > 1:
        raise KeyError(f"{key} is ambiguous between groups {hits}")
    return hits[0], key


def aggregation_scale(n_units: int, bases: PerUnitBases) -> float:
    """Return kappa = n * P_b / P_g.

    >>> aggregation_scale(100_000, PerUnitBases())
    0.05
    """
    if n_units < 1:
        raise ParameterError("n_units", f"must be >= 1, got {n_units!r}")
    return n_units * bases.P_b / bases.P_g


def default_inputs(params: ModelParameters | None = None, p_t0: float = 0.0,
                   p_m0: float | None = None) -> InputVector:
    """Nominal input vector; ``p_t0``/``p_m0`` are normally set by the equilibrium solver."""
    p = params or ModelParameters()
    if p_m0 is None:
        p_m0 = p.grid.p_m0 if p.grid.p_m0 is not None else p.grid.p_l0 + p.kappa * p_t0
    return InputVector(
        p_l=p.grid.p_l0, T_f_ref=p.thermal.T_f_ref, v_dc_ref=1.0, i_q_ref=0.0,
        T_a=p.thermal.T_a, p_t0=p_t0, p_m0=p_m0, w_0=p.grid.w_0, v_g=p.electrical.v_g,
    )


# ---------------------------------------------------------------------------
# config I/O

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _coerce(group: str, name: str, raw: str):
    ftype = {f.name: f.type for f in fields(_GROUPS[group])}[name]
    raw = raw.strip()
    try:
        if "bool" in str(ftype):
            return _BOOL[raw.lower()]
        if "int" in str(ftype) and "float" not in str(ftype):
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        if "str" in str(ftype):
            return raw
        if raw.lower() == "none":
            return None
        return float(raw)
    except (KeyError, ValueError):
        raise ParameterError(name, f"cannot parse {raw!r}") from None


def load_parameters(source: str | Path | Mapping | None = None,
                    defaults: bool | None = None) -> ModelParameters:
    """Build a validated :class:`ModelParameters` from a config document.

    Parameters
    ----------
    source
        Config text, a path to a config file, or a nested mapping
        ``{section: {symbol: value}}``.  ``None`` means an empty document.
    defaults
        Fill fields missing from the document with the published defaults.
        If ``None``, the document's ``[meta] defaults`` key decides.
    """
    if source is None:
        sections: dict[str, dict[str, Any]] = {}
    elif isinstance(source, Mapping):
        sections = {str(k): dict(v) for k, v in source.items()}
    else:
        is_file = isinstance(source, Path) or ("\n" not in source and Path(source).is_file())
        text = Path(source).read_text() if is_file else source
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str  # symbols are case sensitive
        cp.read_string(text)
        sections = {s: dict(cp.items(s)) for s in cp.sections()}

    meta = sections.pop("meta", {})
    if defaults is None:
        defaults = _BOOL.get(str(meta.get("defaults", "false")).lower(), False)

    for sec in sections:
        if sec not in _GROUPS:
            raise ParameterError(sec, "unknown config section")

    groups = {}
    for gname, cls in _GROUPS.items():
        given = sections.get(gname, {})
        known = {f.name for f in fields(cls)}
        for key in given:
            if key not in known:
                raise ParameterError(key, f"unknown symbol in section [{gname}]")
        kwargs = {}
        for f in fields(cls):
            if f.name in given:
                raw = given[f.name]
                kwargs[f.name] = _coerce(gname, f.name, raw) if isinstance(raw, str) else raw
            elif not defaults and gname != "options":
                raise ParameterError(f.name, f"missing from section [{gname}] and defaults not requested")
        groups[gname] = cls(**kwargs)
    return ModelParameters(**groups)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_parameters(params: ModelParameters) -> str:
    """Serialise a parameter set; floats use ``repr`` so reloading is bit-exact."""
    out = io.StringIO()
    out.write("# VSDR model parameters\n")
    for gname in _GROUPS:
        out.write(f"\n[{gname}]\n")
        group = getattr(params, gname)
        for f in fields(group):
            out.write(f"{f.name} = {_fmt(getattr(group, f.name))}\n")
    return out.getvalue()


def parameters_as_dict(params: ModelParameters) -> dict[str, dict[str, Any]]:
    return {g: dataclasses.asdict(getattr(params, g)) for g in _GROUPS}


def rpm_to_pu(rpm: float, bases: PerUnitBases | None = None) -> float:
    return rpm / (bases or PerUnitBases()).rated_speed

