"""Command-line entry point.

Every command writes CSV output plus a ``manifest.txt`` into the output
directory (``--out``, else ``$VSDR_OUT``, else ``./vsdr-out``).

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 non-convergence.

``simulate`` marks a run ``unstable: true`` in the manifest when the
integration stops at the state bound or terminal power leaves a band of
``POWER_BOUND`` pu around its initial value.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .params import INPUT_NAMES, ModelParameters, ParameterError, dump_parameters, load_parameters
from .plant import SingularOperatingPoint
from .reduction import (STRUCTURES, BatteryError, FitError, ReducedFactory, StepBattery,
                        assemble_reduced_closed_loop, dump_models, fit_transfer_function,
                        generate_step_battery, reference_models)
from .simulation import (EquilibriumError, IntegrationError, Scenario, derived_outputs,
                         find_equilibrium, integrate)
from .smallsignal import (NotAnEquilibrium, _full_cell, eigenanalysis, linearize,
                          parameter_sensitivity, stability_map)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONVERGENCE = 0, 2, 3, 4
OUT_ENV = "VSDR_OUT"
DIVERGENCE_BOUND = 1e3
POWER_BOUND = 0.5


def _grid(spec: str) -> tuple[str, np.ndarray]:
    """``name:start:stop:num`` -> (name, linspace)."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ValueError(f"grid {spec!r} must look like name:start:stop:num")
    name, a, b, n = parts
    return name, np.linspace(float(a), float(b), int(n))


def _params(args) -> ModelParameters:
    if args.config is None:
        return ModelParameters()
    return load_parameters(Path(args.config), defaults=args.defaults or None)


def _factory(model: str):
    if model == "full":
        return _full_cell
    if model not in STRUCTURES:
        raise ValueError(f"unknown model {model!r}")
    return ReducedFactory(model)


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV) or "vsdr-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out: Path, args, extra: dict | None = None):
    items = {
        "command": args.command,
        "config": args.config or "defaults",
        "scenario": getattr(args, "scenario", None) or "none",
        "output": str(out),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "argv": " ".join(args.argv),
    }
    items.update(extra or {})
    items["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    lines = [f"{k}: {'null' if v is None else str(v).lower() if isinstance(v, bool) else v}"
             for k, v in items.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _rows_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> dict:
    p = _params(args)
    sc = Scenario.parse(Path(args.scenario).read_text()) if args.scenario else Scenario.load_step()
    out = _out_dir(args)
    op = find_equilibrium(params=p, pin_speed=args.speed)
    if args.model == "full":
        tr = integrate(op.x, sc, p, op.u)
        unstable = False
    else:
        red = assemble_reduced_closed_loop(reference_models()[args.model] if not args.models
                                           else _load_model(args.models, args.model),
                                           p, operating_point=op, offset=args.offset)
        u = np.array([op.u[INPUT_NAMES.index(k)] for k in ("p_l", "p_t0", "p_m0", "w_0")])
        x0, u0 = red.equilibrium(u)
        tr = red.simulate(sc, x0, u0, bound=DIVERGENCE_BOUND)
        unstable = bool(tr.meta["diverged"])
    pt = tr["p_t"]
    unstable = unstable or bool(np.max(np.abs(pt - pt[0])) > POWER_BOUND)
    tr.to_csv(out / "trajectory.csv")
    return {"model": args.model, "unstable": unstable, "samples": tr.t.size}


def _load_model(path, structure):
    from .reduction import load_models
    models = load_models(Path(path))
    if structure not in models:
        raise ValueError(f"{structure} not found in {path}")
    return models[structure]


def cmd_equilibrium(args) -> dict:
    p = _params(args)
    op = find_equilibrium(params=p, pin_speed=args.speed)
    out = _out_dir(args)
    rows = [("state", k, repr(float(v))) for k, v in op.x.as_dict().items()]
    rows += [("input", k, repr(float(v))) for k, v in op.u.as_dict().items()]
    rows += [("output", k, repr(float(v))) for k, v in derived_outputs(op.x, op.u, p).items()]
    _rows_csv(out / "equilibrium.csv", ["kind", "name", "value"], rows)
    return {"residual": op.residual}


def _linear(args):
    p = _params(args)
    if args.model == "full":
        op = find_equilibrium(params=p, pin_speed=args.speed)
        return linearize(op, params=p)
    red = assemble_reduced_closed_loop(args.model, p, w_m0=args.speed)
    return red.linearize()


def cmd_linearize(args) -> dict:
    lin = _linear(args)
    lin.to_csv(_out_dir(args) / "linear_model.csv")
    return {"model": args.model, "states": lin.n_states}


def cmd_eigs(args) -> dict:
    ma = eigenanalysis(_linear(args))
    ma.to_csv(_out_dir(args) / "eigenvalues.csv", top=args.top)
    return {"model": args.model, "max_real": ma.max_real()}


def cmd_battery(args) -> dict:
    b = generate_step_battery(_params(args), step=args.step, duration=args.duration)
    b.to_csv(_out_dir(args) / "battery.csv")
    return {"segments": len(b), "schedule": b.meta["schedule"], "feedforward": b.meta["feedforward"]}


def cmd_fit(args) -> dict:
    if args.battery:
        b = StepBattery.from_csv(Path(args.battery))
    else:
        b = generate_step_battery(_params(args))
    out = _out_dir(args)
    structures = STRUCTURES if args.structure == "all" else [args.structure]
    models = [fit_transfer_function(b, s, restarts=args.restarts, seed=args.seed, jobs=args.jobs)
              for s in structures]
    (out / "models.ini").write_text(dump_models(models))
    _rows_csv(out / "fit.csv", ["structure", "n2", "n1", "n0", "d2", "d1", "d0", "fit"],
              [[m.structure, *map(repr, m.num), *map(repr, m.den), repr(m.fit)] for m in models])
    for m in models:
        print(f"{m.structure}: fit {m.fit:.1f}%  num {m.num}  den {m.den}")
    return {"structures": ",".join(structures)}


def cmd_sweep(args) -> dict:
    name, values = _grid(args.param)
    sw = parameter_sensitivity(name, values, _params(args), _factory(args.model), jobs=args.jobs)
    sw.to_csv(_out_dir(args) / "sweep.csv")
    return {"model": args.model, "parameter": name, "gaps": len(sw.gaps)}


def cmd_stabmap(args) -> dict:
    n1, v1 = _grid(args.p1)
    n2, v2 = _grid(args.p2)
    m = stability_map(n1, v1, n2, v2, _params(args), _factory(args.model), jobs=args.jobs)
    m.to_csv(_out_dir(args) / "stabmap.csv")
    counts = {v: int(np.sum(m.verdict == v)) for v in ("stable", "unstable", "no-equilibrium")}
    return {"model": args.model, **counts}


COMMANDS = {
    "simulate": cmd_simulate, "equilibrium": cmd_equilibrium, "linearize": cmd_linearize,
    "eigs": cmd_eigs, "battery": cmd_battery, "fit": cmd_fit, "sweep": cmd_sweep,
    "stabmap": cmd_stabmap,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vsdr", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--print-defaults", action="store_true",
                    help="print the default parameter document and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="parameter document (INI)")
    common.add_argument("--defaults", action="store_true",
                        help="fill parameters missing from --config with defaults")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./vsdr-out)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps and fits")
    common.add_argument("--speed", type=float, default=None,
                        help="pin the operating compressor speed (pu)")
    sub = ap.add_subparsers(dest="command")
    models = ["full", *STRUCTURES]

    s = sub.add_parser("simulate", parents=[common], help="integrate a scenario")
    s.add_argument("--model", choices=models, default="full")
    s.add_argument("--scenario", help="scenario file; default is the 0.1 pu load decrease")
    s.add_argument("--models", help="transfer-function document overriding the bundled set")
    s.add_argument("--offset", choices=("deviation", "absolute"), default="deviation")

    sub.add_parser("equilibrium", parents=[common], help="solve the operating point")
    for name, hlp in (("linearize", "state-space matrices"), ("eigs", "modal analysis")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--model", choices=models, default="full")
        if name == "eigs":
            s.add_argument("--top", type=int, default=3, help="participating states per mode")

    s = sub.add_parser("battery", parents=[common], help="speed-step identification data")
    s.add_argument("--step", type=float, default=0.02)
    s.add_argument("--duration", type=float, default=1.5)

    s = sub.add_parser("fit", parents=[common], help="fit transfer-function models")
    s.add_argument("--structure", choices=[*STRUCTURES, "all"], default="P2Z1")
    s.add_argument("--battery", help="battery CSV; generated when omitted")
    s.add_argument("--restarts", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep", parents=[common], help="eigenvalue loci over one parameter")
    s.add_argument("--param", required=True, help="name:start:stop:num")
    s.add_argument("--model", choices=models, default="full")

    s = sub.add_parser("stabmap", parents=[common], help="two-parameter stability map")
    s.add_argument("--p1", required=True, help="name:start:stop:num")
    s.add_argument("--p2", required=True, help="name:start:stop:num (T_ip sets k_ip = k_pp/T_ip)")
    s.add_argument("--model", choices=models, default="full")
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(dump_parameters(ModelParameters()))
        return EXIT_OK
    if args.command is None:
        ap.print_help()
        return EXIT_INPUT
    args.argv = argv
    try:
        extra = COMMANDS[args.command](args)
    except (IntegrationError, NotAnEquilibrium, SingularOperatingPoint, BatteryError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EquilibriumError, FitError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ParameterError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _write_manifest(_out_dir(args), args, extra)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
