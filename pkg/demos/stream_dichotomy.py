"""Persistence in a stream with a still-water buffer versus wash-out in fast flow.

    python3 demos/stream_dichotomy.py
"""

import numpy as np

from eigendrift import Field, StreamSpec, classify_persistence, simulate
from eigendrift.stream import default_grid, default_step

SCENARIOS = [
    ("buffer [0, 0.3]", StreamSpec(1e-3, "((x-0.3+abs(x-0.3))/2)^2", "1", "H"), 50.0),
    ("flow >= 0.5", StreamSpec(1e-3, "0.5+x", "1", "H"), 200.0),
]

for name, s, T in SCENARIOS:
    p = classify_persistence(s)
    g = default_grid(s, 400)
    traj = simulate(s, Field(g, np.full(len(g), 1e-2)), T, default_step(s, g, 1e-2))
    print(f"{name:16s} lambda {p.lam:+.5f} -> {p.verdict:11s} "
          f"u(T={T:g}): max {traj.final_max:.3g}, min {traj.final_min:.3g}")
