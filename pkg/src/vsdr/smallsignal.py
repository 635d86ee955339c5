"""Linearization, modal analysis, parameter sweeps and stability maps."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .params import IDX, INPUT_NAMES, STATE_NAMES, ModelParameters
from .simulation import (OUTPUT_NAMES, EquilibriumError, OperatingPoint, _evaluate,
                         find_equilibrium)

#: strict stability threshold on the largest non-structural real part
STABILITY_MARGIN = -1e-9
#: eigenvalues below this magnitude (1/s) may be matched to structural directions
NULL_TOL = 1e-7


class NotAnEquilibrium(ValueError):
    def __init__(self, residual: float):
        super().__init__(f"state is not an equilibrium (|f| = {residual:.3e})")
        self.residual = residual


@dataclass
class LinearModel:
    """dx = A x + B u, y = C x + D u around an operating point.

    ``structural`` holds, column-wise, directions along which the model is
    exactly invariant (absolute angle, redundant integrator pairs).  Modes
    aligned with them are reported but excluded from stability verdicts.
    """
    A: np.ndarray
    B: np.ndarray
    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    output_names: tuple[str, ...] = ()
    x0: np.ndarray | None = None
    u0: np.ndarray | None = None
    structural: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.B = np.asarray(self.B, float).reshape(self.A.shape[0], -1)
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if len(self.state_names) != n or len(self.input_names) != m:
            raise ValueError("label counts do not match A/B dimensions")
        if self.C is not None:
            self.C = np.asarray(self.C, float).reshape(-1, n)
            self.D = np.zeros((self.C.shape[0], m)) if self.D is None else np.asarray(self.D, float)
            if len(self.output_names) != self.C.shape[0]:
                raise ValueError("output label count does not match C")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def is_structural(self, vec: np.ndarray, tol: float = 1e-6) -> bool:
        """Whether ``vec`` lies in the span of the structural directions."""
        if self.structural is None or self.structural.size == 0:
            return False
        Q, _ = np.linalg.qr(self.structural)
        v = vec / np.linalg.norm(vec)
        return bool(np.linalg.norm(v - Q @ (Q.conj().T @ v)) < tol)

    def max_real(self) -> float:
        """Largest real part over the non-structural modes."""
        return eigenanalysis(self).max_real()

    def is_stable(self, margin: float = STABILITY_MARGIN) -> bool:
        return self.max_real() < margin

    def simulate(self, t, dx0, du=None):
        """Deviation response to an initial offset and a constant input offset."""
        t = np.asarray(t, float)
        dx0 = np.asarray(dx0, float)
        n = self.n_states
        du = np.zeros(self.B.shape[1]) if du is None else np.asarray(du, float)
        # augmented exponential keeps constant inputs exact
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = self.A
        M[:n, n] = self.B @ du
        z0 = np.r_[dx0, 1.0]
        return np.array([(scipy.linalg.expm(M * tk) @ z0)[:n] for tk in t])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", *self.state_names, *self.input_names])
        for i, name in enumerate(self.state_names):
            w.writerow([name, *map(repr, self.A[i].tolist()), *map(repr, self.B[i].tolist())])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "LinearModel":
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) \
            else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = tuple(r[0] for r in body)
        n = len(names)
        data = np.array([[float(v) for v in r[1:]] for r in body])
        return cls(data[:, :n], data[:, n:], names, tuple(header[1 + n:]))


def full_structural_directions(params: ModelParameters) -> np.ndarray:
    """Exact invariances of the full model.

    Shifting both absolute angles together changes nothing, and neither does
    trading temperature-integrator for power-integrator content when their
    contributions to the speed reference cancel.
    """
    rot = np.zeros(len(STATE_NAMES))
    rot[[IDX["theta_hat"], IDX["theta_g"]]] = 1.0
    split = np.zeros(len(STATE_NAMES))
    g = params.control
    split[IDX["mu_T"]] = g.k_ip
    split[IDX["mu_pt"]] = -g.k_iT
    return np.column_stack([rot, split / np.linalg.norm(split)])


def jacobians(f, x0, u0, rel_step=1e-7):
    """Central-difference Jacobians of ``f(x, u) -> (dx, y)``."""
    x0 = np.asarray(x0, float)
    u0 = np.asarray(u0, float)
    dx0, y0 = f(x0, u0)
    n, m, q = x0.size, u0.size, np.size(y0)
    A = np.empty((n, n))
    C = np.empty((q, n))
    B = np.empty((n, m))
    D = np.empty((q, m))
    for k in range(n):
        h = rel_step * max(1.0, abs(x0[k]))
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        (fp, yp), (fm, ym) = f(xp, u0), f(xm, u0)
        A[:, k] = (fp - fm) / (2 * h)
        C[:, k] = (yp - ym) / (2 * h)
    for k in range(m):
        h = rel_step * max(1.0, abs(u0[k]))
        up, um = u0.copy(), u0.copy()
        up[k] += h
        um[k] -= h
        (fp, yp), (fm, ym) = f(x0, up), f(x0, um)
        B[:, k] = (fp - fm) / (2 * h)
        D[:, k] = (yp - ym) / (2 * h)
    return A, B, C, D, dx0


def _sync_residual(dx, u, angles, w_0_index, w_b):
    r = np.array(dx, float)
    r[list(angles)] -= u[w_0_index] * w_b
    return float(np.max(np.abs(r)))


def linearize(x0, u0=None, params: ModelParameters | None = None, *, w_ref=None,
              tol: float = 1e-8, rel_step: float = 1e-7) -> LinearModel:
    """Linearize the full model at an equilibrium.

    ``x0`` may also be an :class:`OperatingPoint`.  Angle states keep their
    absolute form, which leaves exactly one zero mode along the common
    rotation; it is recorded as structural.
    """
    p = params or ModelParameters()
    if isinstance(x0, OperatingPoint):
        x0, u0 = x0.x, x0.u
    if u0 is None:
        raise ValueError("inputs u0 are required")
    x0 = np.asarray(x0, float)
    u0 = np.asarray(u0, float)

    def f(x, u):
        dx, out = _evaluate(x, u, p, w_ref)
        return dx, out

    A, B, C, D, dx0 = jacobians(f, x0, u0, rel_step)
    res = _sync_residual(dx0, u0, (IDX["theta_hat"], IDX["theta_g"]),
                         INPUT_NAMES.index("w_0"), p.bases.w_b)
    if res > tol:
        raise NotAnEquilibrium(res)
    return LinearModel(A, B, STATE_NAMES, INPUT_NAMES, C, D, OUTPUT_NAMES, x0, u0,
                       full_structural_directions(p), meta={"model": "full", "residual": res})


@dataclass
class ModalAnalysis:
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    participation: np.ndarray
    state_names: tuple[str, ...]
    structural: np.ndarray

    @property
    def damping(self) -> np.ndarray:
        mag = np.abs(self.eigenvalues)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = -self.eigenvalues.real / mag
        return np.where(mag == 0, 1.0, z)

    @property
    def frequency_hz(self) -> np.ndarray:
        return np.abs(self.eigenvalues.imag) / (2 * np.pi)

    def max_real(self) -> float:
        ev = self.eigenvalues[~self.structural]
        return float(ev.real.max()) if ev.size else -np.inf

    def critical_index(self) -> int:
        idx = np.flatnonzero(~self.structural)
        return int(idx[np.argmax(self.eigenvalues.real[idx])])

    def dominant_states(self, mode: int, n: int = 3) -> list[tuple[str, float]]:
        col = self.participation[:, mode]
        order = np.argsort(col)[::-1][:n]
        return [(self.state_names[i], float(col[i])) for i in order]

    def rows(self, top: int = 3) -> list[dict]:
        out = []
        for i, lam in enumerate(self.eigenvalues):
            out.append({
                "mode": i, "real": float(lam.real), "imag": float(lam.imag),
                "damping": float(self.damping[i]), "freq_hz": float(self.frequency_hz[i]),
                "structural": bool(self.structural[i]),
                "participants": ";".join(f"{s}:{v:.3f}" for s, v in self.dominant_states(i, top)),
            })
        return out

    def to_csv(self, path=None, top: int = 3) -> str:
        rows = self.rows(top)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["mode"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def eigenanalysis(model: LinearModel | np.ndarray) -> ModalAnalysis:
    """Eigenvalues, eigenvectors and normalized participation factors."""
    if not isinstance(model, LinearModel):
        A = np.asarray(model, float)
        names = tuple(f"x{i}" for i in range(A.shape[0]))
        model = LinearModel(A, np.zeros((A.shape[0], 0)), names, ())
    A = model.A
    if not np.all(np.isfinite(A)):
        raise np.linalg.LinAlgError("state matrix has non-finite entries")
    lam, V = scipy.linalg.eig(A)
    W = np.linalg.inv(V)  # rows are left eigenvectors with W V = I
    P = np.abs(V * W.T)
    P = P / P.sum(axis=0, keepdims=True)
    # sort by real part then imaginary part for reproducible tables
    order = np.lexsort((lam.imag, lam.real))[::-1]
    lam, V, W, P = lam[order], V[:, order], W[order, :], P[:, order]
    structural = np.array([abs(l) < NULL_TOL and model.is_structural(V[:, i], 1e-4)
                           for i, l in enumerate(lam)])
    return ModalAnalysis(lam, V, W, P, model.state_names, structural)


# ---------------------------------------------------------------------------
# sweeps

def _full_cell(params: ModelParameters, pin_speed=None) -> LinearModel:
    op = find_equilibrium(params=params, pin_speed=pin_speed)
    return linearize(op, params=params)


@dataclass
class SensitivitySweep:
    parameter: str
    values: np.ndarray
    loci: np.ndarray          # (n_values, n_modes) complex, NaN in gaps
    critical: np.ndarray      # max non-structural real part per value
    gaps: list[int]
    analyses: list[ModalAnalysis | None]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nm = self.loci.shape[1]
        w.writerow([self.parameter, "max_real", *[f"mode{i}_{c}" for i in range(nm) for c in ("re", "im")]])
        for k, v in enumerate(self.values):
            row = [repr(float(v)), repr(float(self.critical[k]))]
            for lam in self.loci[k]:
                row += [repr(float(lam.real)), repr(float(lam.imag))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _match(prev: ModalAnalysis, cur: ModalAnalysis) -> np.ndarray:
    """Permutation of ``cur`` modes that best continues ``prev``.

    Cost is one minus the eigenvector overlap; eigenvalue distance breaks ties.
    """
    Vp = prev.right / np.linalg.norm(prev.right, axis=0)
    Vc = cur.right / np.linalg.norm(cur.right, axis=0)
    overlap = np.abs(Vp.conj().T @ Vc)
    dist = np.abs(prev.eigenvalues[:, None] - cur.eigenvalues[None, :])
    cost = (1 - overlap) + 1e-6 * dist / (1 + dist.max())
    _, cols = linear_sum_assignment(cost)
    return cols


def _sweep_cell(args):
    factory, params, key, value = args
    try:
        return eigenanalysis(factory(params.replace(**{key: value})))
    except (EquilibriumError, NotAnEquilibrium, np.linalg.LinAlgError, ArithmeticError):
        return None


def parameter_sensitivity(key: str, values: Sequence[float], params: ModelParameters | None = None,
                          factory: Callable[[ModelParameters], LinearModel] = _full_cell,
                          jobs: int = 1) -> SensitivitySweep:
    """Eigenvalue loci while one parameter varies.

    ``factory`` builds the linear model for a parameter set; failures (for
    example no equilibrium) leave a gap instead of aborting the sweep.
    """
    p = params or ModelParameters()
    values = np.asarray(values, float)
    cells = [(factory, p, key, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            analyses = list(ex.map(_sweep_cell, cells))
    else:
        analyses = [_sweep_cell(c) for c in cells]
    n = next((a.eigenvalues.size for a in analyses if a is not None), 0)
    loci = np.full((values.size, n), np.nan + 1j * np.nan)
    crit = np.full(values.size, np.nan)
    gaps = [k for k, a in enumerate(analyses) if a is None]
    prev = None
    for k, a in enumerate(analyses):
        if a is None:
            continue
        perm = np.arange(n) if prev is None else _match(prev, a)
        a = ModalAnalysis(a.eigenvalues[perm], a.right[:, perm], a.left[perm, :],
                          a.participation[:, perm], a.state_names, a.structural[perm])
        analyses[k] = a
        loci[k] = a.eigenvalues
        crit[k] = a.max_real()
        prev = a
    return SensitivitySweep(key, values, loci, crit, gaps, analyses)


# ---------------------------------------------------------------------------
# stability maps

@dataclass
class StabilityMap:
    p1: str
    p2: str
    v1: np.ndarray
    v2: np.ndarray
    max_real: np.ndarray      # (len(v1), len(v2)), NaN where no equilibrium
    verdict: np.ndarray       # strings

    def at(self, a: float, b: float) -> str:
        i = int(np.argmin(np.abs(self.v1 - a)))
        j = int(np.argmin(np.abs(self.v2 - b)))
        return str(self.verdict[i, j])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.p1, self.p2, "max_real", "verdict"])
        for i, a in enumerate(self.v1):
            for j, b in enumerate(self.v2):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(self.max_real[i, j])),
                            self.verdict[i, j]])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "StabilityMap":
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) \
            else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        p1, p2 = rows[0][0], rows[0][1]
        body = rows[1:]
        v1 = np.unique([float(r[0]) for r in body])
        v2 = np.unique([float(r[1]) for r in body])
        mr = np.full((v1.size, v2.size), np.nan)
        vd = np.empty((v1.size, v2.size), dtype=object)
        for r in body:
            i = int(np.searchsorted(v1, float(r[0])))
            j = int(np.searchsorted(v2, float(r[1])))
            mr[i, j] = float(r[2])
            vd[i, j] = r[3]
        return cls(p1, p2, v1, v2, mr, vd)


def _overrides(p1, a, p2, b, params: ModelParameters) -> dict:
    """Translate map coordinates into parameter overrides; ``T_ip`` sets k_ip = k_pp / T_ip."""
    vals = {p1: a, p2: b}
    out = {}
    k_pp = vals.get("k_pp", params.control.k_pp)
    for k, v in vals.items():
        if k == "T_ip":
            if v <= 0:
                raise ValueError("T_ip must be positive")
            out["k_ip"] = k_pp / v
        else:
            out[k] = v
    return out


def _map_cell(args):
    factory, params, p1, a, p2, b = args
    try:
        lin = factory(params.replace(**_overrides(p1, a, p2, b, params)))
        mr = eigenanalysis(lin).max_real()
    except (EquilibriumError, NotAnEquilibrium, np.linalg.LinAlgError, ArithmeticError):
        return np.nan, "no-equilibrium"
    return mr, "stable" if mr < STABILITY_MARGIN else "unstable"


def stability_map(p1: str, v1: Sequence[float], p2: str, v2: Sequence[float],
                  params: ModelParameters | None = None,
                  factory: Callable[[ModelParameters], LinearModel] = _full_cell,
                  jobs: int = 1) -> StabilityMap:
    """Classify every cell of a two-parameter grid by its largest real part."""
    p = params or ModelParameters()
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    cells = [(factory, p, p1, a, p2, b) for a in v1 for b in v2]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            res = list(ex.map(_map_cell, cells))
    else:
        res = [_map_cell(c) for c in cells]
    mr = np.array([r[0] for r in res], float).reshape(v1.size, v2.size)
    vd = np.array([r[1] for r in res], dtype=object).reshape(v1.size, v2.size)
    return StabilityMap(p1, p2, v1, v2, mr, vd)
