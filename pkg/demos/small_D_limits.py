"""Principal eigenvalue against its D -> 0 limit for a few drift potentials.

    python3 demos/small_D_limits.py
"""

from eigendrift import BoundaryCondition, limit_small_D, make_problem, sweep

ROBIN = {"left": BoundaryCondition.robin(c=1.0), "right": BoundaryCondition.robin(c=1.0)}
CASES = [
    ("interior minimum, Dirichlet", make_problem("(x-0.5)^2", "0", "dirichlet")),
    ("interior maximum, Neumann", make_problem("-(x-0.5)^2", "1+x", "neumann")),
    ("outflow through Robin faces", make_problem("x", "0", ROBIN)),
]
Ds = [1e-2, 1e-3, 1e-4]

for name, spec in CASES:
    limit = limit_small_D(spec).limit
    table = sweep(spec, Ds, workers=1)
    row = "  ".join(f"D={r.D:.0e}: {r.lam:.6f}" for r in table.rows)
    print(f"{name:32s} limit {limit:g}   {row}")
