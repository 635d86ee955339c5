"""Compare the transfer-function reductions against the full device model.

For each published structure the demo closes the grid and power loops around
the transfer function, lists the slowest closed-loop modes and measures how
well the reduced model tracks the full one after the standard load step.

    python3 demos/reduced_models.py
"""
import numpy as np

from vsdr import (ModelParameters, Scenario, assemble_reduced_closed_loop, find_equilibrium,
                  integrate, reference_models, rmse_metrics)

p = ModelParameters()
op = find_equilibrium(params=p)
sc = Scenario.load_step(duration=1.5)
full = integrate(op.x, sc, p, op.u)

print(f"{'model':6} {'fit %':>6} {'max Re':>9}  slowest real parts         p_t RMSE  speed RMSE")
for name, tf in reference_models().items():
    m = assemble_reduced_closed_loop(tf, p, operating_point=op)
    lin = m.linearize()
    ev = lin.eigenvalues()
    slow = np.sort(np.unique(np.round(ev.real[ev.real < -1e-6], 3)))[::-1][:3]
    line = f"{name:6} {tf.fit:6.0f} {lin.max_real():+9.3f}  {str(slow):26}"
    if lin.is_stable():
        r = m.simulate(sc)
        ep = rmse_metrics(full.t, full["p_t"], r.t, r["p_t"]).transient
        ew = rmse_metrics(full.t, full["w_m"], r.t, r["w_m_ref"]).transient
        line += f" {ep:9.2e} {ew:11.2e}"
    else:
        line += "   unstable closed loop"
    print(line)
