"""Logistic population in a stream with advection.

    u_t - [D u_x - q(x) u]_x = r(x) u - u^2   on (0, 1)

with no flux upstream and one of three downstream conditions: no flux (NF),
free flow u_x = 0 (FF) or hostile u = 0 (H).  The substitution
psi = phi exp(int q / D) turns the linearized problem into the drift
eigenproblem with alpha = 1, m' = q/2 and V = -r, so persistence is decided by
the sign of its principal eigenvalue and the small-D limits follow from the
critical sets of m, which here are the zero sets of q (buffer zones).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import asymptotics as asy
from . import eigen
from . import expr as ex
from . import operators as op
from .model import BoundaryCondition, Field, Grid1D, Potential, ProblemSpec, graded_grid

NF, FF, H = "NF", "FF", "H"
DOWNSTREAM = (NF, FF, H)
SAMPLES = 10_000
MAX_SNAPSHOTS = 200
CLAMP_TOL = 1e-14

EXTINCTION, PERSISTENCE = "extinction", "persistence"


class CrossCheckError(AssertionError):
    """Closed-form stream limits disagree with the general small-D machinery."""


@dataclass(frozen=True, eq=False)
class StreamSpec:
    D: float
    q: ex.Expr
    r: ex.Expr
    downstream: str = NF

    def __post_init__(self):
        for name in ("q", "r"):
            v = getattr(self, name)
            if isinstance(v, (int, float)):
                v = ex.const(float(v))
            elif isinstance(v, str):
                v = ex.parse(v)
            if ex.variables(v) - {"x"}:
                raise ValueError(f"{name} may only depend on x")
            object.__setattr__(self, name, v)
        ds = str(self.downstream).upper()
        if ds not in DOWNSTREAM:
            raise ValueError(f"downstream must be one of {DOWNSTREAM}, got {self.downstream!r}")
        object.__setattr__(self, "downstream", ds)
        if not (math.isfinite(self.D) and self.D > 0):
            raise ValueError("nonpositive diffusion")
        object.__setattr__(self, "D", float(self.D))

    def with_D(self, D: float) -> "StreamSpec":
        return StreamSpec(D, self.q, self.r, self.downstream)

    def with_downstream(self, downstream: str) -> "StreamSpec":
        return StreamSpec(self.D, self.q, self.r, downstream)


def _samples(e: ex.Expr, n: int = SAMPLES):
    xs = np.linspace(0.0, 1.0, n + 1)
    return xs, np.asarray(ex.evaluate(e, {"x": xs}), float) * np.ones(xs.size)


def flow_tolerance(s: StreamSpec) -> float:
    """tol_q = 1e-10 * max q over the samples."""
    _, qv = _samples(s.q)
    return 1e-10 * max(float(np.max(qv)), 0.0)


def check_flow(s: StreamSpec) -> float:
    xs, qv = _samples(s.q)
    tol = 1e-10 * max(float(np.max(qv)), 0.0)
    bad = qv < -tol
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(f"flow speed negative at x={xs[i]:.6g}: q={qv[i]:.6g}")
    return tol


def _abs_zeros(e: ex.Expr):
    """Points in (0, 1) where an abs() argument of e changes sign or vanishes."""
    out = []
    xs = np.linspace(0.0, 1.0, SAMPLES + 1)
    for arg in ex.abs_arguments(e):
        if ex.is_constant(arg):
            continue
        v = np.asarray(ex.evaluate(arg, {"x": xs}), float) * np.ones(xs.size)
        for i in range(xs.size - 1):
            if v[i] == 0 and 0 < i:
                out.append(float(xs[i]))
            elif v[i] * v[i + 1] < 0:
                f = lambda t: float(ex.evaluate(arg, {"x": t}))
                from scipy.optimize import brentq
                out.append(float(brentq(f, xs[i], xs[i + 1], xtol=1e-15)))
    out = sorted(set(round(p, 14) for p in out if 0 < p < 1))
    return tuple(out)


def drift_potential(q: ex.Expr) -> Potential:
    """m with m' = q/2 and m(0) = 0; symbolic for polynomial q, tabulated otherwise."""
    dm = ex.mul(ex.const(0.5), q)
    d2m = ex.differentiate(dm, "x")
    coeffs = ex.as_polynomial(q, "x")
    if coeffs is None:
        return Potential.from_gradient(dm, 0.0, 1.0)
    integ = np.polynomial.polynomial.polyint(0.5 * np.asarray(coeffs, float))
    return Potential(1, ex.from_polynomial(integ), (dm,), ((d2m,),))


def downstream_condition(s: StreamSpec) -> BoundaryCondition:
    if s.downstream == NF:
        return BoundaryCondition.neumann()
    if s.downstream == H:
        return BoundaryCondition.dirichlet()
    q1 = float(ex.evaluate(s.q, {"x": 1.0}))
    if q1 == 0.0:
        return BoundaryCondition.neumann()
    # coefficient q(1)/D: k = 1, beta = q(1), rescaled by 1/D
    return BoundaryCondition.robin(k=1.0, beta=ex.const(q1), per_diffusion=True)


def to_eigenproblem(s: StreamSpec) -> ProblemSpec:
    check_flow(s)
    m = drift_potential(s.q)
    kinks = _abs_zeros(s.q)
    V = ex.neg(s.r)
    bc = {"left": BoundaryCondition.neumann(), "right": downstream_condition(s)}
    return ProblemSpec(1, s.D, 1.0, m, V, bc, ((0.0, 1.0),), kinks)


# --------------------------------------------------------------------------
# buffer zones

@dataclass(frozen=True)
class BufferPattern:
    case: str                  # a, b, c, d or other
    buffers: tuple             # ((lo, hi), ...) sorted and disjoint
    points: tuple = ()         # isolated zeros of q
    tol_q: float = 0.0


def buffer_pattern(s: StreamSpec) -> BufferPattern:
    tol = check_flow(s)
    spec = to_eigenproblem(s)
    cs = asy.critical_points(spec.m, spec.domain, tol / 2, spec.kinks)
    bufs = tuple((iv.left, iv.right) for iv in cs.intervals)
    ivs = cs.intervals
    # a boundary zero of q at the end of a buffer belongs to that buffer
    pts = tuple(p.x for p in cs.points) + tuple(
        p.x for p in cs.sigma2 if not any(lo <= p.x <= hi for lo, hi in bufs))
    if any(iv.open_left and iv.open_right for iv in ivs):
        raise ValueError("flow vanishes on the whole stream: buffer pattern is ambiguous")
    if pts or len(ivs) > 1:
        case = "other"
    elif not ivs:
        case = "a"
    else:
        iv = ivs[0]
        case = "b" if iv.open_left else "d" if iv.open_right else "c"
    return BufferPattern(case, bufs, pts, tol)


# --------------------------------------------------------------------------
# persistence

@dataclass(frozen=True)
class Persistence:
    verdict: str
    lam: float
    borderline: bool
    result: eigen.EigenResult | None = field(default=None, repr=False)


def verdict_from_lambda(lam: float):
    tol = 1e-8 * (1 + abs(lam))
    verdict = EXTINCTION if lam >= -tol else PERSISTENCE
    return verdict, abs(lam) < tol


def default_grid(s: StreamSpec, n: int = 1024) -> Grid1D:
    spec = to_eigenproblem(s)
    layers = asy.layers_for(spec)
    try:
        return graded_grid(0.0, 1.0, n, layers, avoid=spec.kinks)
    except ValueError:
        return graded_grid(0.0, 1.0, n, (), avoid=spec.kinks)


def classify_persistence(s: StreamSpec, grid=None, form: str = "direct") -> Persistence:
    spec = to_eigenproblem(s)
    grid = default_grid(s) if grid is None else grid
    res = eigen.solve(spec, grid, form)
    verdict, border = verdict_from_lambda(res.lam)
    return Persistence(verdict, res.lam, border, res)


def psi_operator(s: StreamSpec, grid: Grid1D) -> op.TridiagonalMatrix:
    """-(1/omega)[D psi' - q psi]' - r psi with fitted fluxes, in the population variable."""
    F = flux_matrix(s, grid)
    r = np.asarray(ex.evaluate(s.r, {"x": grid.nodes}), float) * np.ones(len(grid))
    return op.TridiagonalMatrix(F.lower, F.main - r[F.free], F.upper, False, F.free, grid,
                                None, None, op.DiscretizationForm("population", op.FITTED))


def flux_matrix(s: StreamSpec, grid: Grid1D) -> op.TridiagonalMatrix:
    """Matrix L with (L u)_i = -(F_{i+1/2} - F_{i-1/2}) / omega_i on the free nodes.

    F = D u' - q u through each cell uses the exponentially fitted flux
    (D/h)[B(P) u_{i+1} - B(-P) u_i] with P = q h / D at the cell midpoint.
    """
    check_flow(s)
    x, h, w, D = grid.nodes, grid.h, grid.weights, s.D
    q = np.asarray(ex.evaluate(s.q, {"x": grid.midpoints}), float) * np.ones(h.size)
    P = q * h / D
    up = D * op.bernoulli(P) / h      # weight of u_{i+1} in F_{i+1/2}
    dn = D * op.bernoulli(-P) / h     # weight of u_i in F_{i+1/2}
    N = x.size
    main = np.zeros(N)
    main[:-1] += dn
    main[1:] += up
    sup = -up
    sub = -dn
    if s.downstream == FF:
        main[-1] += float(ex.evaluate(s.q, {"x": 1.0}))   # F(1) = -q(1) u
    main /= w
    sup = sup / w[:-1]
    sub = sub / w[1:]
    hi = N - 1 if s.downstream == H else N
    free = np.arange(hi)
    return op.TridiagonalMatrix(sub[:hi - 1].copy(), main[:hi].copy(), sup[:hi - 1].copy(), False,
                                free, grid, None, None, op.DiscretizationForm("flux", op.FITTED))


def sweep(s: StreamSpec, Ds, policy: asy.GridPolicy | None = None, workers: int | None = None):
    """Converged eigenvalues over D; the free-flow coefficient q(1)/D is rebuilt per row.

    The fitted direct form is the default: with the eigenfunction spread along
    the stream the symmetrized form needs cells much smaller than D/q everywhere.
    """
    policy = policy or asy.GridPolicy(form="direct")
    return asy.sweep(to_eigenproblem(s), Ds, policy, workers)


# --------------------------------------------------------------------------
# small-D limits

@dataclass(frozen=True)
class StreamLimit:
    downstream: str
    case: str
    closed_form: float | None
    report: asy.AsymptoticReport

    @property
    def limit(self) -> float:
        return self.report.limit


def _closed_form(pattern: BufferPattern, V: ex.Expr, downstream: str):
    """Table of limits by buffer case and downstream type; None for pattern 'other'."""
    minV = lambda lo, hi: asy._min_over_interval(V, lo, hi)[1]
    end = float(ex.evaluate(V, {"x": 1.0}))
    case = pattern.case
    if case == "a":
        return end if downstream == NF else math.inf
    if case in ("b", "c"):
        lo, hi = pattern.buffers[0]
        inside = minV(lo, hi)
        return min(inside, end) if downstream == NF else inside
    if case == "d":
        lo, hi = pattern.buffers[0]
        return minV(lo, hi)
    return None


def _agree(a: float, b: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= 1e-12 * (1 + abs(a))


def small_D_limits(s: StreamSpec) -> dict:
    """D -> 0 limits for all three downstream types, cross-checked against the general rule."""
    pattern = buffer_pattern(s)
    out = {}
    for ds in DOWNSTREAM:
        t = s.with_downstream(ds)
        spec = to_eigenproblem(t)
        report = asy.limit_small_D(spec, tol_grad=pattern.tol_q / 2)
        closed = _closed_form(pattern, spec.V, ds)
        if closed is not None and not _agree(closed, report.limit):
            raise CrossCheckError(f"case ({pattern.case}) {ds}: table gives {closed!r}, "
                                  f"critical-set rule gives {report.limit!r}")
        out[ds] = StreamLimit(ds, pattern.case, closed, report)
    return out


# --------------------------------------------------------------------------
# time stepping

@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    fields: tuple
    final_max: float
    final_min: float          # over nodes not pinned by the hostile condition
    flag: str                 # extinction, persistence or undecided
    steps: int = 0

    @property
    def final(self) -> Field:
        return self.fields[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "x", "u"])
        for t, f in zip(self.times, self.fields):
            for x, u in zip(f.grid.nodes, f.values):
                wr.writerow([f"{t:.17g}", f"{x:.17g}", f"{u:.17g}"])
        return buf.getvalue()


class SimulationError(RuntimeError):
    pass


def _banded(L: op.TridiagonalMatrix, dt: float):
    n = L.size
    ab = np.zeros((3, n))
    ab[0, 1:] = dt * L.upper
    ab[1] = 1.0 + dt * L.main
    ab[2, :-1] = dt * L.lower
    return ab


def _flag(umax, umin):
    if umax < 1e-6:
        return EXTINCTION
    if umin > 1e-3:
        return PERSISTENCE
    return "undecided"


def simulate(s: StreamSpec, u0: Field, T: float, dt: float) -> Trajectory:
    """Implicit fitted-flux transport with explicit logistic reaction."""
    grid = u0.grid
    if not isinstance(grid, Grid1D) or abs(grid.a) > 0 or abs(grid.b - 1) > 0:
        raise ValueError("initial data must live on a grid of [0, 1]")
    u = np.array(u0.values, float)
    if np.any(u < 0) or not np.any(u > 0):
        raise ValueError("initial data must be nonnegative and not identically zero")
    if not (T > 0 and dt > 0):
        raise ValueError("horizon and step must be positive")
    r = np.asarray(ex.evaluate(s.r, {"x": grid.nodes}), float) * np.ones(len(grid))
    budget = 0.5 / (max(float(np.max(r)), 0.0) + float(np.max(u)))
    if dt > budget * (1 + 1e-12):
        raise ValueError(f"step {dt:g} exceeds the reaction stability budget {budget:g}")
    bound = 10 * max(float(np.max(u)), float(np.max(r)), 0.0)
    L = flux_matrix(s, grid)
    free = L.free
    if s.downstream == H:
        u[-1] = 0.0
    nsteps = int(math.ceil(T / dt - 1e-9))
    dt = T / nsteps
    ab = _banded(L, dt)
    every = max(1, math.ceil(nsteps / (MAX_SNAPSHOTS - 1)))
    times, snaps = [0.0], [Field(grid, u.copy())]
    rf = r[free]
    for k in range(1, nsteps + 1):
        uf = u[free]
        rhs = uf + dt * (rf * uf - uf * uf)
        new = linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
        low = float(np.min(new))
        if low < 0:
            if low < -CLAMP_TOL:
                raise SimulationError(f"negative density {low:.3g} at t={k * dt:.6g}")
            new = np.maximum(new, 0.0)
        if not np.all(np.isfinite(new)) or float(np.max(new)) > bound:
            raise SimulationError(f"instability at t={k * dt:.6g}")
        u[free] = new
        if k % every == 0 or k == nsteps:
            times.append(k * dt)
            snaps.append(Field(grid, u.copy()))
    umax, umin = float(np.max(u)), float(np.min(u[free]))
    return Trajectory(np.array(times), tuple(snaps), umax, umin, _flag(umax, umin), nsteps)


def default_step(s: StreamSpec, grid: Grid1D, u0max: float) -> float:
    r = np.asarray(ex.evaluate(s.r, {"x": grid.nodes}), float) * np.ones(len(grid))
    return 0.5 / (max(float(np.max(r)), 0.0) + max(u0max, 1.0))


# --------------------------------------------------------------------------
# steady state

@dataclass(frozen=True, eq=False)
class SteadyState:
    field: Field | None       # None means the zero state
    residual: float
    lam: float

    @property
    def is_zero(self) -> bool:
        return self.field is None


def _stationary_residual(L, r, u):
    return -L.matvec(u) + r * u - u * u


def steady_state(s: StreamSpec, grid: Grid1D | None = None, u_start: float = 1e-2,
                 rounds: int = 3) -> SteadyState:
    """Positive steady state when the population persists, otherwise the zero state."""
    grid = grid if grid is not None else default_grid(s, 512)
    p = classify_persistence(s, grid)
    if p.verdict == EXTINCTION:
        return SteadyState(None, 0.0, p.lam)
    L = flux_matrix(s, grid)
    free = L.free
    r = (np.asarray(ex.evaluate(s.r, {"x": grid.nodes}), float) * np.ones(len(grid)))[free]
    u = np.full(len(grid), u_start)
    if s.downstream == H:
        u[-1] = 0.0
    span = 10.0 / max(abs(p.lam), 1e-3)
    for _ in range(rounds):
        # integrate until successive unit-time states differ by less than 1e-9
        t_total = 0.0
        while t_total < span:
            traj = simulate(s, Field(grid, u), 1.0, default_step(s, grid, float(np.max(u))))
            new = np.array(traj.final.values)
            t_total += 1.0
            change = float(np.max(np.abs(new - u)))
            u = new
            if change < 1e-9:
                break
        uf = u[free].copy()
        for _ in range(50):
            F = _stationary_residual(L, r, uf)
            if np.max(np.abs(F)) < 1e-10:
                break
            ab = np.zeros((3, uf.size))
            ab[0, 1:] = -L.upper
            ab[1] = -L.main + r - 2 * uf
            ab[2, :-1] = -L.lower
            step = linalg.solve_banded((1, 1), ab, -F)
            t = 1.0
            norm = float(np.max(np.abs(F)))
            while t > 1e-4:
                trial = uf + t * step
                if np.all(trial >= 0) and np.max(np.abs(_stationary_residual(L, r, trial))) < norm:
                    break
                t /= 2
            uf = uf + t * step
        res = float(np.max(np.abs(_stationary_residual(L, r, uf))))
        if res < 1e-10 and np.min(uf) > 0:
            u[free] = uf
            return SteadyState(Field(grid, u), res, p.lam)
        span *= 4
    raise SimulationError("steady state not found: Newton did not converge after integration")
