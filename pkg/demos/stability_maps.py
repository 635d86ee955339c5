"""Power-loop tuning maps for the full model and two reduced models.

Sweeps the proportional gain k_pp and the time constant T_ip = k_pp / k_ip and
prints a character map per model: '.' stable, 'X' unstable, '?' no equilibrium.

    python3 demos/stability_maps.py [jobs]
"""
import sys

import numpy as np

from vsdr import ModelParameters, stability_map
from vsdr.reduction import ReducedFactory
from vsdr.smallsignal import _full_cell

jobs = int(sys.argv[1]) if len(sys.argv) > 1 else 1
k_pp = np.array([1.0, 2.0, 4.5, 8.0, 10.0, 12.0, 15.0, 20.0])
T_ip = np.array([0.005, 0.02, 0.05, 0.1, 0.125, 0.15, 0.2, 0.3])
mark = {"stable": ".", "unstable": "X", "no-equilibrium": "?"}
p = ModelParameters()

for label, factory in (("full model", _full_cell), ("P2Z0", ReducedFactory("P2Z0")),
                       ("P3Z0", ReducedFactory("P3Z0"))):
    m = stability_map("k_pp", k_pp, "T_ip", T_ip, p, factory, jobs=jobs)
    print(f"\n{label}   columns T_ip [ms]: {' '.join(f'{t * 1e3:5.0f}' for t in T_ip)}")
    for i, k in enumerate(k_pp):
        print(f"  k_pp {k:5.1f}          {' '.join(f'{mark[v]:>5}' for v in m.verdict[i])}")
