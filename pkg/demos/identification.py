"""Identify the device's power response from speed-reference steps.

Generates the step battery with the power loop open, fits every structure
and sets the fitted coefficients beside the published ones.

    python3 demos/identification.py [restarts] [jobs]
"""
import sys

from vsdr import fit_transfer_function, generate_step_battery, reference_models
from vsdr.reduction import STRUCTURES

restarts = int(sys.argv[1]) if len(sys.argv) > 1 else 8
jobs = int(sys.argv[2]) if len(sys.argv) > 2 else 1
battery = generate_step_battery()
lo, hi = battery.speed_range
print(f"battery: {len(battery)} steps covering {lo:.3f}-{hi:.3f} pu")

published = reference_models()
for s in STRUCTURES:
    m = fit_transfer_function(battery, s, restarts=restarts, seed=0, jobs=jobs)
    ref = published[s]
    print(f"{s}: fit {m.fit:5.1f} % (published {ref.fit:.0f} %), dc gain {m.dc_gain:.3f} "
          f"(published {ref.dc_gain:.3f}), poles {', '.join(f'{z:.2f}' for z in m.poles())}")
